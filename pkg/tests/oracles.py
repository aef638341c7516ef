"""Independent reference implementations used only by the tests.

Nothing here imports the code paths it checks: the GAT reference works on
dense adjacency matrices with explicit loops over heads and nodes, the
hitting-time reference propagates the state distribution step by step,
and the hash reference re-derives FNV-1a byte by byte.
"""

import numpy as np

FNV64_OFFSET = 14695981039346656037
FNV64_PRIME = 1099511628211


def fnv1a_64_reference(data: bytes) -> int:
    h = FNV64_OFFSET
    for byte in data:
        h = ((h ^ byte) * FNV64_PRIME) % (1 << 64)
    return h


def identifier_reference(automation_id, class_name, control_type, process_name) -> int:
    """Presence flag byte then the four fields, 0x1F separated."""
    if automation_id is None:
        parts = [b"\x00"]
    else:
        parts = [b"\x01" + automation_id.encode("utf-8")]
    parts += [class_name.encode("utf-8"), control_type.encode("utf-8"), process_name.encode("utf-8")]
    return fnv1a_64_reference(b"\x1f".join(parts))


def count_nodes(node) -> int:
    return 1 + sum(count_nodes(c) for c in node.children)


def preorder(node, out=None):
    out = [] if out is None else out
    out.append(node)
    for c in node.children:
        preorder(c, out)
    return out


# ----------------------------------------------------------------- dense GAT

def dense_adjacency(n, edges):
    """adj[i, j] = 1 when j sends to i, plus self loops."""
    adj = np.eye(n, dtype=bool)
    for src, dst in edges:
        adj[dst, src] = True
    return adj


def dense_gat_layer(x, adj, weight, attention, heads, out_dim, slope=0.2, concat=True):
    n = x.shape[0]
    outs = []
    for hd in range(heads):
        W = weight[:, hd * out_dim:(hd + 1) * out_dim]
        a_q = attention[hd, :out_dim]
        a_k = attention[hd, out_dim:]
        h = x @ W
        out = np.zeros((n, out_dim))
        for i in range(n):
            logits = np.full(n, -np.inf)
            for j in range(n):
                if adj[i, j]:
                    s = a_q @ h[i] + a_k @ h[j]
                    logits[j] = s if s > 0 else slope * s
            w = np.exp(logits - logits.max())
            w /= w.sum()
            out[i] = w @ h
        outs.append(out)
    if concat:
        return np.concatenate(outs, axis=1)
    return np.mean(outs, axis=0)


def dense_qnetwork(net, x, adj):
    l1, l2 = net.layer1, net.layer2
    z = dense_gat_layer(x, adj, l1.weight.value, l1.attention.value, l1.heads, l1.out_dim,
                        l1.negative_slope, concat=True)
    z = np.maximum(z, 0.0)
    return dense_gat_layer(z, adj, l2.weight.value, l2.attention.value, l2.heads, l2.out_dim,
                           l2.negative_slope, concat=False)


# ------------------------------------------------------------- hitting time

def hitting_time_by_propagation(P, absorb, start, tol=1e-13, max_steps=10_000_000):
    """E[T] = sum_t P(T > t), pushing the surviving mass through ``P``."""
    mass = np.zeros(P.shape[0])
    mass[start] = 1.0
    total = 0.0
    for _ in range(max_steps):
        alive = mass.sum()
        if alive < tol:
            break
        total += alive
        mass = mass @ P
    return total


def random_chain(rng, n_screens, actions_per_screen, fire_screen):
    """Transition matrix and absorption vector of a random screen graph."""
    P = np.zeros((n_screens, n_screens))
    absorb = np.zeros(n_screens)
    for s in range(n_screens):
        k = actions_per_screen[s]
        for a in range(k):
            if s == fire_screen and a == 0:
                absorb[s] += 1.0 / k
            else:
                P[s, rng.integers(n_screens)] += 1.0 / k
    return P, absorb
