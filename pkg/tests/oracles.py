"""Independent reference computations used by the tests.

Everything here is written as plain scalar loops in extended precision
(mpmath) so it shares no code path with the package's vectorized numpy
implementation.
"""
import mpmath as mp

mp.mp.dps = 40


def _act(name, x):
    return x if name == "linear" else mp.tanh(x)


def layers_from_flat(sizes, input_dim, flat):
    """Split a flat parameter list into [(W rows, b)] per layer."""
    out, pos, fan = [], 0, input_dim
    for n in sizes:
        w = [[flat[pos + i * fan + j] for j in range(fan)] for i in range(n)]
        pos += n * fan
        b = [flat[pos + i] for i in range(n)]
        pos += n
        out.append((w, b))
        fan = n
    assert pos == len(flat)
    return out


def forward_from(layers, acts, start, net_input):
    """Propagate from the net input of layer ``start`` (0-based) to the output."""
    a = [_act(acts[start], x) for x in net_input]
    for l in range(start + 1, len(layers)):
        w, b = layers[l]
        n = [sum((w[i][j] * a[j] for j in range(len(a))), mp.mpf(0)) + b[i] for i in range(len(b))]
        a = [_act(acts[l], x) for x in n]
    return a


def net_inputs(layers, acts, u):
    """Net inputs n^l for every layer."""
    ns, a = [], [mp.mpf(x) for x in u]
    for (w, b), act in zip(layers, acts):
        n = [sum((w[i][j] * a[j] for j in range(len(a))), mp.mpf(0)) + b[i] for i in range(len(b))]
        ns.append(n)
        a = [_act(act, x) for x in n]
    return ns


def output(sizes, input_dim, acts, flat, u):
    layers = layers_from_flat(sizes, input_dim, flat)
    return forward_from(layers, acts, 0, net_inputs(layers, acts, u)[0])


def fd_error_jacobian(sizes, input_dim, acts, flat, inputs, step=mp.mpf("1e-12")):
    """Central differences of e = t - a; rows sample-major, returns floats."""
    flat = [mp.mpf(float(x)) for x in flat]
    rows = []
    for u in inputs:
        cols = []
        for k in range(len(flat)):
            hi, lo = list(flat), list(flat)
            hi[k] += step
            lo[k] -= step
            a_hi = output(sizes, input_dim, acts, hi, u)
            a_lo = output(sizes, input_dim, acts, lo, u)
            cols.append([-(p - q) / (2 * step) for p, q in zip(a_hi, a_lo)])
        for o in range(sizes[-1]):
            rows.append([float(c[o]) for c in cols])
    return rows


def fd_half_sse_wrt_net_inputs(sizes, input_dim, acts, flat, u, target, step=mp.mpf("1e-12")):
    """d(0.5 |t - a|^2)/d n^l for every layer, by central differences."""
    layers = layers_from_flat(sizes, input_dim, [mp.mpf(float(x)) for x in flat])
    ns = net_inputs(layers, acts, u)
    t = [mp.mpf(float(x)) for x in target]

    def half_sse(l, n):
        a = forward_from(layers, acts, l, n)
        return sum((ti - ai) ** 2 for ti, ai in zip(t, a)) / 2

    grads = []
    for l, n in enumerate(ns):
        g = []
        for i in range(len(n)):
            hi, lo = list(n), list(n)
            hi[i] += step
            lo[i] -= step
            g.append(float((half_sse(l, hi) - half_sse(l, lo)) / (2 * step)))
        grads.append(g)
    return grads
