"""Acceptance gate: ten criteria, one PASS/FAIL line each.

Each criterion records its verdict in VERDICTS; conftest.py prints one
line per criterion in the terminal summary, outside pytest's output
capture.  Property checks are exact or carry the stated tolerances; the
transfer experiment runs a scaled-down meta-dataset that keeps the full
pipeline intact.
"""
import functools
import sys
import time

import numpy as np

from dmfbs import autodiff as ad
from dmfbs import d2v
from dmfbs.data import Dataset, assign_splits, batch
from dmfbs.genmeta import (SynthSpec, TargetNetSpec, build_meta_dataset,
                           synth, synth_dataset)
from dmfbs.hpo import (HPORun, baseline_random, greedy_select,
                       normalized_regret, run_dmfbs)
from dmfbs.meta import MetaDataset, normalize_responses
from dmfbs.metalearn import MetaConfig, meta_learn_init, zero_shot_regret
from dmfbs.nn import (Activation, Dense, OptimizerState, collect_grads,
                      forward_dense_stack, grad_check, init_params, lift,
                      optimizer_step)
from dmfbs.objective import (TrainConfig, combined_loss, loss_dbi, loss_mr,
                             loss_sur)
from dmfbs.space import enumerate_grid, expand_layout, get_space
from dmfbs.surrogate import SurrogateModel


VERDICTS: list[tuple[int, str, bool]] = []


def _report(num, desc, passed):
    VERDICTS.append((num, desc, passed))
    verdict = "PASS" if passed else "FAIL"
    sys.__stdout__.write(f"ACCEPTANCE {num:2d} {verdict} - {desc}\n")
    sys.__stdout__.flush()


def criterion(num, desc):
    def deco(fn):
        @functools.wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                fn(*args, **kwargs)
            except BaseException:
                _report(num, desc, False)
                raise
            _report(num, desc, True)
        return wrapper
    return deco


def random_dataset(name, n=24, f=2, c=2, seed=0, split=False):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, c, size=n)
    y[:c] = np.arange(c)
    codes = assign_splits(n, rng) if split else np.zeros(n, dtype=np.int8)
    return Dataset(name, rng.normal(size=(n, f)).astype(np.float32), y, c, codes)


# -- 1: grid enumeration --------------------------------------------------


@criterion(1, "grid enumeration yields 256/288/324 configs in under 1 s")
def test_criterion_1_grid_sizes():
    start = time.perf_counter()
    sizes = {name: len(enumerate_grid(get_space(name)))
             for name in ("layout", "regularization", "optimization")}
    elapsed = time.perf_counter() - start
    assert sizes == {"layout": 256, "regularization": 288, "optimization": 324}
    assert elapsed < 1.0, f"enumeration took {elapsed:.2f}s"


# -- 2: layout expansion --------------------------------------------------


@criterion(2, "layout expansion reproduces all five (4 neurons, 5 layers) examples")
def test_criterion_2_layout_examples():
    assert expand_layout("const", 4, 5) == [4, 4, 4, 4, 4]
    assert expand_layout("expand", 4, 5) == [4, 8, 16, 32, 64]
    assert expand_layout("contract", 4, 5) == [64, 32, 16, 8, 4]
    assert expand_layout("diamond", 4, 5) == [4, 8, 16, 8, 4]
    assert expand_layout("hourglass", 4, 5) == [16, 8, 4, 8, 16]


# -- 3: gradient suite ----------------------------------------------------


def _tiny_meta_for_losses(seed):
    space = get_space("layout")
    grid = enumerate_grid(space)[:6]
    datasets = {f"g{i}": random_dataset(f"g{i}", n=16, seed=seed * 10 + i)
                for i in range(2)}
    rng = np.random.default_rng(seed)
    responses = {(did, c.id): float(rng.uniform(0, 100))
                 for did in datasets for c in grid}
    return MetaDataset(space, datasets, grid, responses, normalized=True)


def _combined_closure(meta, model, seed):
    """The full three-term objective as a pure function of lifted params."""
    rng = np.random.default_rng(seed)
    cfg = TrainConfig()
    target, other = meta.datasets["g0"], meta.datasets["g1"]
    picked = meta.triples_for("g0")[:4]
    enc = np.stack([c.encoded for c, _ in picked])
    b1, b2, bm = batch(target, rng), batch(target, rng), batch(other, rng)

    def closure(lifted):
        mf_t = d2v.extract_var(target, model.params, lifted=lifted)
        mf_o = d2v.extract_var(other, model.params, lifted=lifted)
        preds_t = model.predict_var(enc, mf_t, lifted)
        preds_o = model.predict_var(enc, mf_o, lifted)

        def row(preds, i):
            picker = np.zeros((1, len(picked)), dtype=preds.value.dtype)
            picker[0, i] = 1.0
            return ad.matmul(ad.Var(picker), preds).reshape(())

        pred_list = [row(preds_t, i) for i in range(len(picked))]
        sur = loss_sur(pred_list, [loss for _, loss in picked])
        entries = [(c, mf_t, p) for (c, _), p in zip(picked, pred_list)]
        entries += [(c, mf_o, row(preds_o, i)) for i, (c, _) in enumerate(picked)]
        mr = loss_mr(entries)
        sims = [
            d2v.similarity_var(d2v.extract_var(b1, model.params, lifted=lifted),
                               d2v.extract_var(b2, model.params, lifted=lifted)),
            d2v.similarity_var(d2v.extract_var(b1, model.params, lifted=lifted),
                               d2v.extract_var(bm, model.params, lifted=lifted)),
        ]
        dbi = loss_dbi(sims, [1, 0], cfg.sim_clamp)
        return combined_loss(sur, mr, dbi, cfg)

    return closure


@criterion(3, "gradient checks (dense stack, extractor, combined loss) "
              "max relative error < 1e-4 over 20 seeds in under 60 s")
def test_criterion_3_gradient_suite():
    start = time.perf_counter()
    worst = 0.0

    # (a) random dense stacks, every coordinate
    for seed in range(20):
        rng = np.random.default_rng(seed)
        specs = [Dense("a", 6), Activation("relu"), Dense("b", 5),
                 Activation("selu"), Dense("c", 1)]
        params = init_params(specs, 3, rng)
        x = rng.normal(size=(5, 3)).astype(np.float32)

        def stack_closure(lifted):
            out = forward_dense_stack(x, specs, params, lifted=lifted)
            return ad.square(out).sum()

        worst = max(worst, grad_check(stack_closure, params, step=3e-6))

    # (b) the metafeature extractor, sampled coordinates
    for seed in range(20):
        ds = random_dataset(f"gc{seed}", n=12, f=2, c=2, seed=seed)
        params = d2v.init_mfe_params(np.random.default_rng(seed))

        def mfe_closure(lifted):
            return ad.square(d2v.extract_var(ds, params, lifted=lifted)).sum()

        worst = max(worst, grad_check(mfe_closure, params, step=3e-6,
                                      rng=np.random.default_rng(seed),
                                      max_coords=30))

    # (c) the full combined objective, sampled coordinates
    for seed in range(20):
        meta = _tiny_meta_for_losses(seed)
        model = SurrogateModel(enc_dim=len(meta.grid[0].encoded), seed=seed)
        closure = _combined_closure(meta, model, seed)
        worst = max(worst, grad_check(closure, model.params, step=3e-6,
                                      rng=np.random.default_rng(seed),
                                      max_coords=20))

    elapsed = time.perf_counter() - start
    assert worst < 1e-4, f"max relative gradient error {worst:.2e}"
    assert elapsed < 60.0, f"gradient suite took {elapsed:.1f}s"


# -- 4: permutation invariance --------------------------------------------


@criterion(4, "metafeature extraction invariant to row/feature/class "
              "permutations within 1e-5 over 100 cases")
def test_criterion_4_permutation_invariance():
    params = d2v.init_mfe_params(np.random.default_rng(0))
    rng = np.random.default_rng(1)
    for case in range(100):
        n = int(rng.integers(10, 80))
        f = int(rng.integers(1, 5))
        c = int(rng.integers(2, 5))
        ds = random_dataset(f"p{case}", n=n, f=f, c=c, seed=case)
        base = d2v.extract(ds, params).values
        kind = case % 3
        if kind == 0:
            order = rng.permutation(n)
            other = Dataset(ds.id, ds.X[order], ds.y[order], c, ds.split[order])
        elif kind == 1:
            order = rng.permutation(f)
            other = Dataset(ds.id, ds.X[:, order], ds.y, c, ds.split)
        else:
            order = rng.permutation(c)
            other = Dataset(ds.id, ds.X, order[ds.y], c, ds.split)
        got = d2v.extract(other, params).values
        assert np.allclose(base, got, atol=1e-5), f"case {case} kind {kind}"


# -- 5: loss identities ---------------------------------------------------


@criterion(5, "loss identities (perfect SUR, gated MR, ln 2 DBI, alpha=0)")
def test_criterion_5_loss_identities():
    sc = lambda x: ad.Var(np.float64(x))

    preds = [sc(0.25), sc(7.0)]
    assert loss_sur(preds, [0.25, 7.0]).item() == 0.0

    grid = enumerate_grid(get_space("layout"))[:2]
    mf_a, mf_b = ad.Var(np.zeros((1, 3))), ad.Var(np.ones((1, 3)))
    # equal predictions: zero regardless of similarity
    assert loss_mr([(grid[0], mf_a, sc(2.0)), (grid[0], mf_b, sc(2.0))]).item() == 0.0
    # unmatched configs: the indicator keeps the pair out entirely
    assert loss_mr([(grid[0], mf_a, sc(1.0)), (grid[1], mf_b, sc(9.0))]).item() == 0.0

    assert abs(loss_dbi([sc(0.5)], [1]).item() - np.log(2.0)) < 1e-9
    assert abs(loss_dbi([sc(0.5)], [0]).item() - np.log(2.0)) < 1e-9

    cfg = TrainConfig(alpha_mr=0.0, alpha_dbi=0.0)
    assert combined_loss(sc(3.5), sc(99.0), sc(42.0), cfg).item() == 3.5


# -- 6: meta-update arithmetic --------------------------------------------


@criterion(6, "Reptile outer update equals theta + lr*mean(theta_i - theta); "
              "v = 0 is a fixed point")
def test_criterion_6_meta_update_arithmetic():
    space = get_space("layout")
    grid = enumerate_grid(space)[:8]
    datasets = {f"m{i}": random_dataset(f"m{i}", seed=40 + i) for i in range(4)}
    rng = np.random.default_rng(0)
    responses = {(did, c.id): float(rng.uniform(0, 100))
                 for did in datasets for c in grid}
    meta = MetaDataset(space, datasets, grid, responses, normalized=True)
    model = SurrogateModel(enc_dim=len(grid[0].encoded), seed=0)

    def shift(params, amount):
        out = params.zeros_like()
        for name, arr in out.items():
            out[name] = arr + amount
        return params + out

    deltas = [0.5, -0.25, 1.0]
    it = iter(deltas)

    def inner(theta, task_id):
        return shift(theta, next(it))

    cfg = MetaConfig(inner_steps=1, meta_batch=3, outer_iters=1, outer_lr=0.4)
    theta0 = model.params.copy()
    got = meta_learn_init(meta, model, cfg, ["m0", "m1", "m2"], [], TrainConfig(),
                          np.random.default_rng(0), inner_update=inner)
    disp = theta0.zeros_like()
    for d in deltas:
        disp = disp + (shift(theta0, d) - theta0)
    want = theta0 + (0.4 / 3) * disp
    assert got.allclose(want, rtol=0, atol=0)

    # v = 0: no inner adaptation, so the initialization never moves
    model2 = SurrogateModel(enc_dim=len(grid[0].encoded), seed=1)
    theta0 = model2.params.copy()
    cfg0 = MetaConfig(inner_steps=0, meta_batch=2, outer_iters=3, outer_lr=0.5,
                      eval_budget=2)
    got = meta_learn_init(meta, model2, cfg0, ["m0", "m1"], ["m3"],
                          TrainConfig(extract_rows=16), np.random.default_rng(0))
    assert got.allclose(theta0, rtol=0, atol=0)


# -- 7: greedy and regret oracles -----------------------------------------


@criterion(7, "greedy matches exhaustive sort; regret matches brute-force "
              "running min; 1000 random curves non-increasing")
def test_criterion_7_greedy_and_regret():
    grid = enumerate_grid(get_space("layout"))
    rng = np.random.default_rng(0)
    for _ in range(50):
        budget = int(rng.integers(1, len(grid) + 1))
        scores = rng.normal(size=len(grid))
        got = [c.id for c in greedy_select(grid, budget, scores)]
        want = sorted(range(len(grid)),
                      key=lambda i: (scores[i], grid[i].id))[:budget]
        assert got == [grid[i].id for i in want]

    for trial in range(1000):
        n = int(rng.integers(1, 20))
        losses = rng.uniform(0, 100, size=n)
        responses = {("d", i): float(losses[i]) for i in range(n)}
        run = HPORun("m", "d", 0, 0, [(i, float(losses[i])) for i in range(n)],
                     budget=n)
        curve = normalized_regret(run, responses).values
        assert np.allclose(curve, np.minimum.accumulate(losses), atol=0)
        assert np.all(np.diff(curve) <= 0)


# -- 8: batch identification learnability ---------------------------------


def _row_view(ds, rng, frac=0.5):
    """Row subsample keeping every feature and at least one row per class."""
    n = max(ds.n_classes, int(round(ds.n_instances * frac)))
    picks = {int(rng.choice(np.flatnonzero(ds.y == c)))
             for c in range(ds.n_classes)}
    rest = [i for i in range(ds.n_instances) if i not in picks]
    extra = rng.choice(len(rest), size=max(0, n - len(picks)), replace=False)
    rows = np.sort(np.array(sorted(picks) + [rest[i] for i in extra]))
    return Dataset(ds.id + "#view", ds.X[rows], ds.y[rows], ds.n_classes,
                   ds.split[rows])


@criterion(8, "500 DBI-only steps separate positive from negative pair "
              "similarity by >= 0.2 in under 120 s")
def test_criterion_8_dbi_learnability():
    start = time.perf_counter()
    spec = SynthSpec(n_datasets=10, instances=(40, 80), features=(2, 4),
                     classes=(2, 4))
    gen = np.random.default_rng(0)
    datasets = [synth_dataset(f"dbi{i}", spec, gen) for i in range(10)]

    params = d2v.init_mfe_params(np.random.default_rng(1))
    opt = OptimizerState("adam", lr=0.003, beta1=0.0)
    rng = np.random.default_rng(2)
    cap = 32

    for _ in range(500):
        n, m = rng.choice(10, size=2, replace=False)
        b1, b2 = _row_view(datasets[n], rng), _row_view(datasets[n], rng)
        bm = _row_view(datasets[m], rng)
        lifted = lift(params)
        mf1 = d2v.extract_var(b1, params, lifted=lifted, max_rows=cap)
        sims = [d2v.similarity_var(mf1, d2v.extract_var(b2, params, lifted=lifted,
                                                        max_rows=cap)),
                d2v.similarity_var(mf1, d2v.extract_var(bm, params, lifted=lifted,
                                                        max_rows=cap))]
        loss = loss_dbi(sims, [1, 0])
        loss.backward()
        params = optimizer_step(opt, params, collect_grads(lifted))

    eval_rng = np.random.default_rng(3)
    pos, neg = [], []
    for i in range(10):
        for _ in range(3):
            a = d2v.extract(_row_view(datasets[i], eval_rng), params).values
            b = d2v.extract(_row_view(datasets[i], eval_rng), params).values
            pos.append(d2v.similarity(a, b))
        for j in range(10):
            if i < j:
                a = d2v.extract(_row_view(datasets[i], eval_rng), params).values
                b = d2v.extract(_row_view(datasets[j], eval_rng), params).values
                neg.append(d2v.similarity(a, b))

    margin = float(np.mean(pos) - np.mean(neg))
    elapsed = time.perf_counter() - start
    assert margin >= 0.2, f"similarity margin {margin:.3f}"
    assert elapsed < 120.0, f"DBI training took {elapsed:.1f}s"


# -- 9: end-to-end transfer ------------------------------------------------


@criterion(9, "meta-learned surrogate beats Random zero-shot @5 and beats "
              "Random and random-init sequential @20, in under 15 min")
def test_criterion_9_end_to_end_transfer():
    start = time.perf_counter()
    spec = SynthSpec(n_datasets=60, instances=(40, 100), features=(2, 3),
                     classes=(2, 3), noise=0.01)
    space = get_space("layout")
    raw, _oracle = synth(spec, space, np.random.default_rng(0))
    meta = normalize_responses(raw)

    ids = meta.dataset_ids()
    order = np.random.default_rng(1).permutation(len(ids))
    train_ids = [ids[i] for i in order[:40]]
    valid_ids = [ids[i] for i in order[40:48]]
    test_ids = [ids[i] for i in order[48:60]]

    train_cfg = TrainConfig(extract_rows=48)
    meta_cfg = MetaConfig(inner_steps=10, meta_batch=1, outer_iters=120,
                          outer_lr=1.0, eval_every=5, patience=30,
                          eval_budget=5)
    model = SurrogateModel(enc_dim=len(meta.grid[0].encoded), seed=0)
    trained = model.clone(
        meta_learn_init(meta.restricted(train_ids + valid_ids), model, meta_cfg,
                        train_ids, valid_ids, train_cfg,
                        np.random.default_rng(2)))

    seeds = (0, 1, 2)

    # (a) zero-shot @5
    zs_dmfbs, zs_random = [], []
    for did in test_ids:
        dm = zero_shot_regret(trained, meta, did, budget=5)
        for seed in seeds:
            zs_dmfbs.append(dm)
            rng = np.random.default_rng((seed, hash16(did)))
            picks = baseline_random(meta.grid, 5, rng)
            zs_random.append(min(meta.responses[(did, cid)] for cid in picks))
    zs_margin = float(np.mean(zs_random) - np.mean(zs_dmfbs))

    # (b) sequential @20
    budget = 20
    train_meta = meta.restricted(train_ids)
    seq = {"dmfbs": [], "dmfbs-ri": [], "random": []}
    for did in test_ids:
        target = meta.datasets[did]
        for seed in seeds:
            rng = np.random.default_rng((seed, hash16(did), 7))
            for method, mdl in (("dmfbs", trained),
                                ("dmfbs-ri", SurrogateModel(
                                    enc_dim=trained.enc_dim, seed=seed))):
                run = run_dmfbs(
                    target, train_meta, mdl,
                    response_fn=lambda c: meta.responses[(did, c.id)],
                    budget=budget, init_budget=1, train_cfg=train_cfg,
                    rng=np.random.default_rng((seed, hash16(did), 7)),
                    fine_tune_steps=2, method=method, fold=0, seed=seed)
                seq[method].append(normalized_regret(run, meta.responses).at(budget))
            picks = baseline_random(meta.grid, budget, rng)
            seq["random"].append(min(meta.responses[(did, cid)] for cid in picks))

    seq_margin_random = float(np.mean(seq["random"]) - np.mean(seq["dmfbs"]))
    seq_margin_ri = float(np.mean(seq["dmfbs-ri"]) - np.mean(seq["dmfbs"]))
    elapsed = time.perf_counter() - start

    sys.__stdout__.write(
        f"  transfer margins: zero-shot@5 {zs_margin:+.2f}, "
        f"sequential@20 vs random {seq_margin_random:+.2f}, "
        f"vs random-init {seq_margin_ri:+.2f} ({elapsed:.0f}s)\n")
    assert zs_margin > 0.0, f"zero-shot margin {zs_margin:.3f}"
    assert seq_margin_random > 0.0, f"sequential margin vs random {seq_margin_random:.3f}"
    assert seq_margin_ri > 0.0, f"sequential margin vs random init {seq_margin_ri:.3f}"
    assert elapsed < 900.0, f"transfer experiment took {elapsed:.0f}s"


def hash16(text: str) -> int:
    import hashlib
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:2], "little")


# -- 10: mini meta-dataset generation -------------------------------------


@criterion(10, "mini meta-dataset build completes, resumes, and satisfies "
               "the [0,100] span invariant in under 10 min")
def test_criterion_10_mini_generation(tmp_path):
    start = time.perf_counter()
    datasets = {}
    for i in range(3):
        rng = np.random.default_rng(70 + i)
        n = 40
        y = rng.integers(0, 2, size=n)
        y[:2] = [0, 1]
        datasets[f"mini{i}"] = Dataset(
            f"mini{i}", rng.normal(size=(n, 3)).astype(np.float32), y, 2,
            assign_splits(n, rng))

    space = get_space("layout")
    grid = enumerate_grid(space)[:16]
    path = tmp_path / "results.csv"
    spec = TargetNetSpec(epochs=3)
    meta = build_meta_dataset(datasets, space, spec, path, grid=grid)
    assert len(meta.responses) == 3 * 16

    # resumability: truncate the log, rebuild, and demand identical output
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:1 + 20]) + "\n")
    resumed = build_meta_dataset(datasets, space, spec, path, grid=grid)
    assert resumed.responses == meta.responses

    for did in datasets:
        vals = [meta.responses[(did, c.id)] for c in grid]
        assert np.isclose(min(vals), 0.0) and np.isclose(max(vals), 100.0)
        assert all(0.0 <= v <= 100.0 for v in vals)

    elapsed = time.perf_counter() - start
    assert elapsed < 600.0, f"mini generation took {elapsed:.0f}s"
