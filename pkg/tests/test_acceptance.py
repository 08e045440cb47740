"""End-to-end acceptance checks.

Each test appends one ``PASS/FAIL criterion N: ...`` line to ``RESULTS``;
``conftest.py`` prints them at the end of the session. Expensive runs are
cached at module level and shared between criteria.
"""

import math
import sys
import time
from itertools import combinations

import numpy as np
import pytest

from subgraph_fl.analysis import mask_overlap, pearson, similarity_label_correlation
from subgraph_fl.config import parse_config
from subgraph_fl.fl.aggregation import aggregation_weights
from subgraph_fl.fl.client import Strategy, new_client
from subgraph_fl.fl.experiment import build_world, run_experiment
from subgraph_fl.fl.server import ServerState, run_round
from subgraph_fl.gradcheck import run_suite
from subgraph_fl.graph import generate_er
from subgraph_fl.nn import PARAM_NAMES, count_nonzero, roc_auc
from subgraph_fl.partition import Partition, clustering_coefficient, js_divergence, missing_edges

RESULTS = []
_CACHE = {}


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    RESULTS.append(line)
    print(line)
    assert ok, line


def final_rows(res):
    last = max(r.round for r in res.records)
    return [r for r in res.records if r.round == last]


# -- configs ------------------------------------------------------------------

def equal_clients_cfg(kind, **strategy):
    return parse_config({
        "graph": {"kind": "sbm", "num_blocks": 4, "nodes_per_block": 30, "p_in": 0.3, "p_out": 0.02,
                  "feat_dim": 16, "feature_signal": 1.0},
        "partition": {"mode": "blocks", "block_size": 30},
        "strategy": dict(kind=kind, **strategy),
        "training": {"rounds": 10, "local_epochs": 1, "lambda1": 0.0, "lambda2": 0.0, "mask_threshold": 0.0},
        "output_dir": "unused",
    })


def fig1_cfg(kind, seed):
    strategy = {"kind": kind, "tau": 10} if kind == "fedpub" else {"kind": kind}
    return parse_config({
        "graph": {"kind": "community", "community_sizes": [5, 5, 40], "subgraph_size": 30,
                  "p_in": 0.5, "p_out": 0.1, "feature_signal": 0.0},
        "partition": {"mode": "blocks", "block_size": 30},
        "strategy": strategy,
        "training": {"rounds": 100, "local_epochs": 3, "oracle_epochs": 3},
        "seed": seed,
        "output_dir": "unused",
    })


def fig4_cfg(out="unused"):
    return parse_config({
        "graph": {"kind": "community", "community_sizes": [5, 15], "subgraph_size": 30,
                  "p_in": 0.7, "p_out": 0.01, "feature_signal": 0.0},
        "partition": {"mode": "blocks", "block_size": 30},
        "strategy": {"kind": "fedpub", "tau": 10},
        "training": {"rounds": 20, "local_epochs": 3},
        "snapshot_rounds": [20],
        "output_dir": out,
    })


SPARSITY_LAMBDAS = (0.3, 0.5, 0.7, 0.9)


def sparsity_cfg(kind, lam1=0.001, out="unused"):
    return parse_config({
        "graph": {"kind": "sbm", "feature_signal": 3.0},
        "partition": {"mode": "disjoint", "k": 10},
        "strategy": {"kind": kind},
        "training": {"rounds": 100, "local_epochs": 1, "lr": 0.01, "lambda1": lam1, "mask_threshold": 3e-4},
        "output_dir": out,
    })


def cached(key, make):
    if key not in _CACHE:
        t0 = time.perf_counter()
        res = make()
        _CACHE[key] = (res, time.perf_counter() - t0)
    return _CACHE[key]


def fig1_run(kind, seed):
    return cached(("fig1", kind, seed), lambda: run_experiment(fig1_cfg(kind, seed), write=False))


def sparsity_run(lam1):
    return cached(("sparsity", lam1), lambda: run_experiment(sparsity_cfg("fedpub", lam1), write=False))


# -- criteria -----------------------------------------------------------------

def test_criterion_1_gradients():
    t0 = time.perf_counter()
    res = run_suite(20, seed=0)
    dt = time.perf_counter() - t0
    ok = res.max_rel_error < 1e-4 and dt < 30
    record(1, ok, f"max relative error {res.max_rel_error:.2e} over {res.num_components} components "
                  f"(both heads, lambda1=lambda2=1e-3), {dt:.1f}s")


def test_criterion_2_fedavg_equivalence():
    t0 = time.perf_counter()
    world = build_world(equal_clients_cfg("fedavg"))
    assert len(set(len(d.split.train_ids) for d in world.data)) == 1
    avg = run_experiment(equal_clients_cfg("fedavg"), write=False, keep_dispatched=True)
    pub = run_experiment(equal_clients_cfg("fedpub", tau=0.0, use_masks=False), write=False, keep_dispatched=True)
    worst = 0.0
    for r in range(1, 11):
        for a, b in zip(avg.dispatched[r], pub.dispatched[r]):
            for n in PARAM_NAMES:
                worst = max(worst, float(np.max(np.abs(a[n] - b[n]))))
    dt = time.perf_counter() - t0
    # with masks trained, local trajectories differ; reported for information only
    masked = run_experiment(equal_clients_cfg("fedpub", tau=0.0), write=False, keep_dispatched=True)
    drift = max(float(np.max(np.abs(a[n] - b[n])))
                for a, b in zip(avg.dispatched[10], masked.dispatched[10]) for n in PARAM_NAMES)
    ok = worst <= 1e-9 and dt < 60
    record(2, ok, f"max-abs dispatched difference {worst:.1e} over 10 rounds x 4 clients, {dt:.1f}s "
                  f"(masks frozen at one; with trainable masks round-10 drift is {drift:.1e})")


def test_criterion_3_aggregation_algebra():
    two = aggregation_weights([1.0, 0.0], 5.0)
    closed = np.array([1 / (1 + math.exp(-5)), math.exp(-5) / (1 + math.exp(-5))])
    err = float(np.max(np.abs(two - closed)))
    err_lit = float(np.max(np.abs(two - [0.993307, 0.006693])))
    uni = aggregation_weights([0.3, -0.2, 0.9, 0.1], 0.0)
    rng = np.random.default_rng(3)
    sums = []
    for _ in range(1000):
        k = int(rng.integers(1, 40))
        row = rng.uniform(-1, 1, size=k)
        sums.append(abs(aggregation_weights(row, float(rng.uniform(0, 50))).sum() - 1))
    ok = err < 1e-6 and err_lit < 1e-6 and np.allclose(uni, 0.25, atol=0, rtol=0) and max(sums) <= 1e-9
    record(3, ok, f"closed-form error {err:.1e}, uniform at tau=0, max |row sum - 1| {max(sums):.1e} over 1000 rows")


def test_criterion_4_knowledge_collapse():
    minority = slice(0, 10)
    per_seed = []
    for seed in (0, 1, 2):
        avg = np.array([r.test_acc for r in final_rows(fig1_run("fedavg", seed)[0])])
        pub = np.array([r.test_acc for r in final_rows(fig1_run("fedpub", seed)[0])])
        per_seed.append((pub[minority].mean(), avg[minority].mean(), avg[10:].mean()))
    dt = sum(_CACHE[("fig1", k, s)][1] for k in ("fedavg", "fedpub") for s in (0, 1, 2))
    pub_min, avg_min, avg_maj = np.mean(per_seed, axis=0)
    ok = pub_min > avg_min and avg_min < avg_maj and dt < 900
    detail = ", ".join(f"seed {s}: {a:.3f}/{b:.3f}/{c:.3f}" for s, (a, b, c) in enumerate(per_seed))
    record(4, ok, f"fedpub minority {pub_min:.3f} vs fedavg minority {avg_min:.3f}, fedavg majority {avg_maj:.3f} "
                  f"({detail}), {dt:.0f}s")


def test_criterion_5_community_detection():
    t0 = time.perf_counter()
    res = run_experiment(fig4_cfg(), write=False)
    dt = time.perf_counter() - t0
    comm = np.repeat([0, 1], [5, 15])
    co = (comm[:, None] == comm[None, :]).astype(float)
    s = res.similarity[20]
    same = co.astype(bool) & ~np.eye(20, dtype=bool)
    intra, inter = s[same].mean(), s[~co.astype(bool)].mean()
    r = similarity_label_correlation(s, co)
    ok = intra > inter and r > 0.5 and dt < 600
    record(5, ok, f"round 20 intra {intra:.4f} > inter {inter:.4f}, Pearson with co-membership {r:.4f}, {dt:.1f}s")


def test_criterion_6_sparsity_monotone():
    sp, acc = [], []
    for lam in SPARSITY_LAMBDAS:
        rows = final_rows(sparsity_run(lam)[0])
        sp.append(float(np.mean([r.sparsity for r in rows])))
        acc.append(float(np.mean([r.test_acc for r in rows])))
    dt = sum(_CACHE[("sparsity", lam)][1] for lam in SPARSITY_LAMBDAS)
    increasing = all(a < b for a, b in zip(sp, sp[1:]))
    drop = 100 * (acc[0] - acc[-1])
    ok = increasing and drop < 10 and dt < 600
    pairs = ", ".join(f"{lam}: {s:.4f}/{a:.3f}" for lam, s, a in zip(SPARSITY_LAMBDAS, sp, acc))
    record(6, ok, f"sparsity/accuracy by lambda1 {pairs}; accuracy drop {drop:.2f} points, {dt:.0f}s")


def test_criterion_7_oracle_dominance():
    t0 = time.perf_counter()
    oracle = fig1_run("oracle", 0)[0]
    means = {k: float(np.mean([r.test_acc for r in final_rows(fig1_run(k, 0)[0])]))
             for k in ("fedavg", "fedprox", "fedper", "local", "fedpub")}
    dt = time.perf_counter() - t0
    om = float(np.mean([r.test_acc for r in final_rows(oracle)]))
    ok = all(om >= v for v in means.values()) and dt < 300
    others = ", ".join(f"{k} {v:.3f}" for k, v in means.items())
    record(7, ok, f"oracle {om:.3f} >= {others}; {dt:.0f}s")


# brute-force oracles for criterion 8

def _js_brute(p, q):
    total = 0.0
    for a, b in zip(p, q):
        m = (a + b) / 2
        if a > 0:
            total += 0.5 * a * math.log2(a / m)
        if b > 0:
            total += 0.5 * b * math.log2(b / m)
    return total


def _auc_brute(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l]
    neg = [s for s, l in zip(scores, labels) if not l]
    wins = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def _missing_brute(edges, clients):
    k = len(clients)
    out = np.zeros((k, k), dtype=np.int64)
    for i in range(k):
        for j in range(k):
            if i == j:
                continue
            ci, cj = set(clients[i]), set(clients[j])
            for u, v in edges:
                crosses = (u in ci and v in cj) or (v in ci and u in cj)
                inside_both = u in ci and v in ci and u in cj and v in cj
                out[i, j] += crosses and not inside_both
    return out


def _clustering_brute(n, edges):
    nbr = {i: set() for i in range(n)}
    for u, v in edges:
        nbr[u].add(v)
        nbr[v].add(u)
    vals = []
    for i in range(n):
        d = len(nbr[i])
        if d < 2:
            vals.append(0.0)
            continue
        links = sum(1 for a, b in combinations(sorted(nbr[i]), 2) if b in nbr[a])
        vals.append(2.0 * links / (d * (d - 1)))
    return sum(vals) / n


def _overlap_brute(a, b, thr):
    hit = tot = 0
    for name in a:
        for x, y in zip(a[name].ravel().tolist(), b[name].ravel().tolist()):
            hit += abs(x) >= thr and x != 0 and abs(y) >= thr and y != 0
            tot += 1
    return hit / tot


def _pearson_brute(x, y):
    n = len(x)
    mx, my = math.fsum(x) / n, math.fsum(y) / n
    sxy = math.fsum((a - mx) * (b - my) for a, b in zip(x, y))
    sxx = math.fsum((a - mx) ** 2 for a in x)
    syy = math.fsum((b - my) ** 2 for b in y)
    return sxy / math.sqrt(sxx * syy)


def test_criterion_8_oracle_suites():
    rng = np.random.default_rng(8)
    worst = {}

    def note(name, a, b):
        worst[name] = max(worst.get(name, 0.0), abs(float(a) - float(b)))

    for t in range(100):
        c = int(rng.integers(2, 8))
        p = rng.random(c) * (rng.random(c) > 0.3)
        q = rng.random(c) * (rng.random(c) > 0.3)
        p[0] += 0.1
        q[-1] += 0.1
        p, q = p / p.sum(), q / q.sum()
        note("js", js_divergence(p, q), _js_brute(p, q))

        m = int(rng.integers(2, 30))
        scores = rng.integers(0, 6, size=m) / 5.0 if t % 2 else rng.normal(size=m)
        labels = rng.random(m) < 0.5
        labels[0], labels[1] = True, False
        note("auc", roc_auc(scores, labels), _auc_brute(scores.tolist(), labels.tolist()))

        n = int(rng.integers(2, 16))
        g = generate_er(n, float(rng.uniform(0.1, 0.9)), 2, int(rng.integers(0, 2**31)))
        k = int(rng.integers(2, 5))
        if t % 2:
            clients = [rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False) for _ in range(k)]
            part = Partition(tuple(clients), "overlapping")
        else:
            k = min(k, n)
            assign = rng.integers(0, k, size=n)
            assign[:k] = np.arange(k)
            clients = [np.flatnonzero(assign == i) for i in range(k)]
            part = Partition(tuple(clients))
        got = missing_edges(g, part)
        want = _missing_brute(g.edges.tolist(), [c.tolist() for c in part.client_nodes])
        note("missing_edges", np.max(np.abs(got - want)), 0)

        note("clustering", clustering_coefficient(g), _clustering_brute(n, g.edges.tolist()))

        shapes = {"A": (int(rng.integers(1, 5)), int(rng.integers(1, 5))), "b": (int(rng.integers(1, 6)),)}
        ma = {k2: rng.normal(size=s) * (rng.random(s) > 0.2) for k2, s in shapes.items()}
        mb = {k2: rng.normal(size=s) * (rng.random(s) > 0.2) for k2, s in shapes.items()}
        thr = float(rng.uniform(0, 1.5))
        note("mask_overlap", mask_overlap(ma, mb, thr), _overlap_brute(ma, mb, thr))

        x = rng.normal(size=int(rng.integers(3, 40))) * 10 ** rng.uniform(-3, 3)
        y = 0.3 * x + rng.normal(size=len(x))
        note("pearson", pearson(x, y), _pearson_brute(x.tolist(), y.tolist()))

    ok = all(v <= 1e-10 for v in worst.values())
    record(8, ok, "max abs error over 100 instances: " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))


def test_criterion_9_determinism(tmp_path):
    t0 = time.perf_counter()
    checks = {}
    jobs = {
        "fedavg-equivalence": lambda: equal_clients_cfg("fedpub", tau=0.0, use_masks=False),
        "community-detection": fig4_cfg,
        "sparsity-0.9": lambda: sparsity_cfg("fedpub", 0.9),
    }
    for name, make in jobs.items():
        blobs = []
        for workers in (1, 3):
            cfg = make()
            cfg.output_dir = str(tmp_path / f"{name}-{workers}")
            run_experiment(cfg, workers=workers)
            blobs.append((tmp_path / f"{name}-{workers}" / "metrics.csv").read_bytes())
        checks[name] = blobs[0] == blobs[1] and len(blobs[0]) > 0
    cfg = fig1_cfg("oracle", 0)
    blobs = []
    for i in range(2):
        cfg.output_dir = str(tmp_path / f"oracle-{i}")
        run_experiment(cfg)
        blobs.append((tmp_path / f"oracle-{i}" / "metrics.csv").read_bytes())
    checks["oracle"] = blobs[0] == blobs[1]
    dt = time.perf_counter() - t0
    ok = all(checks.values())
    record(9, ok, "byte-identical metrics.csv across 1 vs 3 workers: "
                  + ", ".join(f"{k} {'yes' if v else 'NO'}" for k, v in checks.items()) + f", {dt:.0f}s")


def test_criterion_10_communication():
    t0 = time.perf_counter()
    cfg = sparsity_cfg("fedpub", 0.9)
    world = build_world(cfg)
    strategy = Strategy.from_config(cfg)
    clients = [new_client(i, d, world.init, strategy, world.probes[i], cfg.seed) for i, d in enumerate(world.data)]
    server = ServerState(world.init, len(clients))
    records, mismatches = [], 0
    for _ in range(cfg.training.rounds):
        rows = run_round(server, clients, strategy, cfg.training.local_epochs)
        for row, banked in zip(rows, server.bank):
            mismatches += row.params_sent != count_nonzero(banked)
        records.extend(rows)
    same_run = [vars(r) for r in records] == [vars(r) for r in sparsity_run(0.9)[0].records]
    avg = run_experiment(sparsity_cfg("fedavg"), write=False)
    dt = time.perf_counter() - t0
    pub_sent = sum(r.params_sent for r in records)
    avg_sent = sum(r.params_sent for r in avg.records)
    rel = 100.0 * pub_sent / avg_sent
    total_rel = 100.0 * sum(r.params_sent + r.params_received for r in records) / sum(
        r.params_sent + r.params_received for r in avg.records)
    ok = rel < 100.0 and mismatches == 0 and same_run
    record(10, ok, f"client->server volume {rel:.2f}% of fedavg (sent+received {total_rel:.2f}%), "
                   f"{mismatches} params_sent mismatches over {len(records)} payloads, "
                   f"matches criterion-6 run: {same_run}, {dt:.0f}s")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s"]))
