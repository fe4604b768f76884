"""Acceptance suite: one test per criterion, one printed pass/fail line each.

Run with `pytest tests/test_acceptance.py -v -s`. Criterion 9 (real-dataset
reproduction) only runs when HGNN_TRAFFIC_FINES_CSV and
HGNN_TRAFFIC_FINES_SCHEMA point at the public log; it is skipped otherwise.
"""

import json
import math
import os
import re
import time

import numpy as np
import pytest

from conftest import finite_difference_grad, max_rel_error, nudge_from_kinks
from hgnn import tensor as T
from hgnn.cli import main as cli_main
from hgnn.eventlog import (
    BinningPolicy,
    Event,
    Trace,
    encode_dataset,
    encode_trace,
    fit_encoders,
    generate_synthetic_log,
)
from hgnn.models import LayerSpec, ModelConfig, build_model
from hgnn.operators import collate
from hgnn.tensor import Tensor
from hgnn.training import Scheduler, SchedulerConfig

pytestmark = pytest.mark.acceptance


def _report(criterion, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    print(f"[{status}] criterion {criterion}: {detail}")
    assert ok, f"criterion {criterion} failed: {detail}"


# -- criterion 1: gradient suite ---------------------------------------------------------


def test_criterion_01_gradient_suite():
    from test_operators import _make_params, chain_batch

    started = time.perf_counter()
    rng = np.random.default_rng(42)
    worst = 0.0

    # all six operators on random chains n in {1, 2, 5, 8}
    for kind in ("gcn", "graph", "sage", "tag", "cheb", "gin"):
        for n in (1, 2, 5, 8):
            v = nudge_from_kinks(rng.uniform(-2, 2, size=(n, 3)))
            batch = chain_batch(v, rng.random(max(n - 1, 0)))
            params = _make_params(kind, 3, 2, rng)
            mixer = Tensor(rng.normal(size=(2, 1)))

            def forward():
                from hgnn.operators import apply_operator
                out = apply_operator(params, Tensor(batch.x), batch)
                return T.sum_all(T.matmul(out, mixer))

            forward().backward()
            for w in params.weights:
                grad = w.grad.copy()
                fd = finite_difference_grad(lambda: forward().item(), w.data)
                worst = max(worst, max_rel_error(grad, fd))
                w.zero_grad()

    # all six activations through a small composite
    for kind in T.ACTIVATIONS:
        x = Tensor(nudge_from_kinks(rng.uniform(-2, 2, size=(4, 3))), requires_grad=True)
        mixer = Tensor(rng.normal(size=(3, 1)))

        def forward(x=x, kind=kind, mixer=mixer):
            return T.sum_all(T.matmul(T.apply_activation(x, kind), mixer))

        forward().backward()
        fd = finite_difference_grad(lambda: forward().item(), x.data)
        worst = max(worst, max_rel_error(x.grad, fd))

    # architecture blocks: one model per architecture, end-to-end loss gradient
    for arch in ("one_level", "two_level", "two_level_pseudo", "two_level_embedding"):
        from test_models import random_graph, simple_config

        cfg = simple_config(arch, "gin", gnn_layers=[LayerSpec(6, "tanh")],
                            final_dense_layers=[LayerSpec(5, "softplus")])
        dims = {"d_N": 7, "d_G": 3, "n_bins": 4, "n_activities": 3}
        model = build_model(cfg, dims, seed=1)
        model.set_eval()  # keep dropout out of the FD path
        batch = collate([random_graph(rng, n=n, label=n % 2) for n in (2, 5)])

        def forward(model=model, batch=batch):
            return T.cross_entropy_loss(model.forward(batch), batch.labels)

        forward().backward()
        for p in model.parameters():
            if p.grad is None:
                continue
            grad = p.grad.copy()
            fd = finite_difference_grad(lambda: forward().item(), p.data)
            worst = max(worst, max_rel_error(grad, fd))
            p.zero_grad()

    elapsed = time.perf_counter() - started
    _report(1, worst < 1e-4 and elapsed < 60,
            f"max relative error {worst:.2e}, runtime {elapsed:.1f}s")


# -- criterion 2: operator oracles ---------------------------------------------------------


def test_criterion_02_operator_oracles():
    from test_operators import (
        chain_batch, dense_gcn, dense_rescaled_laplacian, params_for, _identity_mlp,
    )
    from hgnn.operators import (
        forward_cheb, forward_gcn, forward_gin, forward_graph, forward_sage, forward_tag,
    )

    rng = np.random.default_rng(7)
    checks = []

    # GCN 2-node chain vs independent dense route (A[target][source], directed)
    batch = chain_batch([[1.0], [0.0]], [1.0])
    out = forward_gcn(params_for("gcn", 1, 1, [np.eye(1)]), Tensor(batch.x), batch)
    checks.append(np.abs(out.data - dense_gcn(batch, batch.x, np.eye(1))).max())
    checks.append(np.abs(out.data - [[1.0], [1.0 / math.sqrt(2)]]).max())

    # GraphConv add / mean
    b2 = chain_batch([[2.0], [4.0]], [0.5])
    add = forward_graph(params_for("graph", 1, 1, [np.eye(1)], aggregation="add"),
                        Tensor(b2.x), b2)
    mean = forward_graph(params_for("graph", 1, 1, [np.eye(1)], aggregation="mean"),
                         Tensor(b2.x), b2)
    checks.append(np.abs(add.data - [[0.0], [1.0]]).max())
    checks.append(np.abs(mean.data - [[0.0], [2.0]]).max())

    # SAGE hand case
    sage = forward_sage(params_for("sage", 1, 1, [np.array([[1.0], [1.0]])]),
                        Tensor(b2.x), b2)
    checks.append(np.abs(sage.data - [[2.0], [6.0]]).max())

    # TAG K in {0, 1}
    v = rng.normal(size=(3, 2))
    t0 = rng.normal(size=(2, 2))
    b3 = chain_batch(v, rng.random(2))
    tag0 = forward_tag(params_for("tag", 2, 2, [t0], K=0), Tensor(b3.x), b3)
    checks.append(np.abs(tag0.data - v @ t0).max())
    b4 = chain_batch([[1.0], [0.0]], [1.0])
    tag1 = forward_tag(params_for("tag", 1, 1, [np.eye(1), np.eye(1)], K=1),
                       Tensor(b4.x), b4)
    checks.append(np.abs(tag1.data - [[1.0], [1.0]]).max())

    # Cheb K in {0, 1, 2}: identity, edgeless K=1, and the T2 recurrence
    cheb0 = forward_cheb(params_for("cheb", 2, 2, [t0], K=0), Tensor(b3.x), b3)
    checks.append(np.abs(cheb0.data - v @ t0).max())
    edgeless = chain_batch(v, [0.0, 0.0])
    edgeless.src = edgeless.dst = np.zeros(0, dtype=np.int64)
    edgeless.w = np.zeros(0)
    t1 = rng.normal(size=(2, 2))
    cheb1 = forward_cheb(params_for("cheb", 2, 2, [t0, t1], K=1),
                         Tensor(edgeless.x), edgeless)
    checks.append(np.abs(cheb1.data - (v @ t0 - v @ t1)).max())
    thetas = [rng.normal(size=(2, 2)) for _ in range(3)]
    cheb2 = forward_cheb(params_for("cheb", 2, 2, thetas, K=2), Tensor(b3.x), b3)
    lap = dense_rescaled_laplacian(b3)
    t_mats = [np.eye(3), lap, 2.0 * lap @ lap - np.eye(3)]
    expected = sum(t_mats[k] @ v @ thetas[k] for k in range(3))
    checks.append(np.abs(cheb2.data - expected).max())

    # GIN eps = 0.5
    b5 = chain_batch([[1.0], [2.0]], [1.0])
    gin = forward_gin(params_for("gin", 1, 1, _identity_mlp(1), epsilon=0.5),
                      Tensor(b5.x), b5)
    checks.append(np.abs(gin.data - [[1.5], [4.0]]).max())

    # spectral identity: cheb K=0 == tag K=0 == V Theta0, exactly
    c = forward_cheb(params_for("cheb", 2, 2, [t0], K=0), Tensor(b3.x), b3).data
    g = forward_tag(params_for("tag", 2, 2, [t0], K=0), Tensor(b3.x), b3).data
    identity_exact = np.array_equal(c, g) and np.array_equal(c, v @ t0)

    worst = max(checks)
    _report(2, worst < 1e-12 and identity_exact,
            f"max oracle deviation {worst:.2e}, K=0 identity exact: {identity_exact}")


# -- criterion 3: encoding suite -----------------------------------------------------------


def test_criterion_03_encoding_suite():
    from test_eventlog import SCHEMA, _fitted_state

    rng = np.random.default_rng(3)
    ok = True
    details = []

    # edge weights in [0, 1], exactly 0 for simultaneous events
    state, _ = _fitted_state()
    trace = Trace("x", [
        Event("A", 0, 60, {"resource": "r1", "amount": 2.0}),
        Event("B", 60, 120, {"resource": "r1", "amount": 2.0}),
        Event("A", 60, 90, {"resource": "r1", "amount": 2.0}),
    ], {"priority": 5.0}, "yes")
    g = encode_trace(trace, state, SCHEMA)
    ok &= bool((g.edge_weights >= 0).all() and (g.edge_weights <= 1).all())
    ok &= g.edge_weights[1] == 0.0
    details.append(f"weights {g.edge_weights.tolist()}")

    # median imputation + min-max composition: (4 - 2) / 8 = 0.25
    t2 = Trace("x", [Event("A", 0, 60, {"resource": "r1", "amount": None})],
               {"priority": 5.0}, "yes")
    g2 = encode_trace(t2, state, SCHEMA)
    col = state.n_activities + len(state.cat_vocabs["resource"])
    ok &= g2.node_features[0, col] == 0.25
    details.append(f"imputed+scaled {g2.node_features[0, col]}")

    # bin totality over 1000 random duration sets
    violations = 0
    for _ in range(1000):
        durations = rng.integers(0, 3000, size=int(rng.integers(3, 25)))
        events = [Event("A", 0, 60.0 * d, {"resource": "r", "amount": 1.0})
                  for d in durations]
        st = fit_encoders([Trace("t", events, {"priority": 1.0}, "y")], SCHEMA,
                          BinningPolicy("< 5", int(rng.integers(1, 6))))
        for d in rng.integers(0, 5000, size=5):
            b = st.duration_bin(int(d))
            if not 0 <= b < st.n_bins:
                violations += 1
    ok &= violations == 0
    details.append(f"bin violations {violations}")

    # masked entries provably inert: re-encode with different unseen levels
    from test_models import test_masked_inputs_are_inert
    test_masked_inputs_are_inert(rng)
    details.append("masking inert")

    _report(3, ok, "; ".join(details))


# -- criterion 4: trainer suite -------------------------------------------------------------


def test_criterion_04_trainer_suite():
    from hgnn.training import Optimizer, OptimizerConfig

    checks = []
    checks.append(abs(T.cross_entropy_loss(Tensor([[0.0, 0.0]]), [0]).item() - math.log(2)))
    checks.append(abs(T.cross_entropy_loss(
        Tensor([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), [0, 1]).item() - math.log(3)))
    checks.append(abs(T.multi_margin_loss(Tensor([[0.0, 0.0]]), [0]).item() - 0.5))
    checks.append(abs(T.multi_margin_loss(Tensor([[0.0, 2.0]]), [0]).item() - 1.5))

    def opt(lr=1e-3):
        w = Tensor([[0.0]], requires_grad=True)
        return Optimizer([w], OptimizerConfig(kind="sgd", learning_rate=lr,
                                              sgd_momentum=0.0))

    o = opt(1e-3)
    Scheduler(SchedulerConfig(kind="step", step_size=1, gamma=0.1), o).on_epoch(1.0)
    checks.append(abs(o.lr - 1e-4))

    o = opt(1e-2)
    s = Scheduler(SchedulerConfig(kind="cosine_annealing", t_max=10, eta_min=1e-5), o)
    for _ in range(10):
        s.on_epoch(1.0)
    checks.append(abs(o.lr - 1e-5))

    o = opt()
    s = Scheduler(SchedulerConfig(kind="one_cycle", max_lr=0.1, pct_start=0.25),
                  o, steps_per_epoch=10, max_epochs=40, batch_size=32)
    for _ in range(int(0.25 * s.total_steps)):
        s.on_batch()
    checks.append(abs(o.lr - 0.1))

    # early stopping halts at exactly patience + 1 stagnant epochs
    from hgnn.training import TrialConfig, train

    traces, schema = generate_synthetic_log(40, seed=0)
    ds = encode_dataset(traces, schema, BinningPolicy("< 5", 3), seed=0)
    cfg = TrialConfig(
        model=ModelConfig(architecture="one_level", operator="gcn",
                          gnn_layers=[LayerSpec(8, "relu")],
                          final_dense_layers=[LayerSpec(6, "tanh")],
                          pooling="mean", output_size=2),
        optimizer=OptimizerConfig(kind="sgd", learning_rate=0.0, sgd_momentum=0.0),
        scheduler=SchedulerConfig(kind="exponential", gamma=0.99),
        loss="cross_entropy", batch_size=16,
    )
    model = build_model(cfg.model, ds.dims, seed=0)
    outcome = train(model, ds.train, ds.val, cfg, max_epochs=50, patience=7, seed=0)
    stopping_ok = outcome.stopped_early and len(outcome.epoch_history) == 8

    worst = max(checks)
    _report(4, worst < 1e-9 and stopping_ok,
            f"max closed-form deviation {worst:.2e}, stop at patience+1: {stopping_ok}")


# -- criterion 5: hpo suite -----------------------------------------------------------------


def test_criterion_05_hpo_suite():
    from test_hpo import tpe_beats_random_fraction
    from hgnn.hpo import TrialRecord, build_search_space, should_prune, suggest
    from hgnn.models import ARCHITECTURES
    from hgnn.operators import OPERATOR_KINDS

    started = time.perf_counter()
    rng = np.random.default_rng(55)
    pairs = [(a, o) for a in ARCHITECTURES for o in OPERATOR_KINDS]
    violations = 0
    total = 0
    for pair in pairs:
        space = build_search_space(*pair)
        by_name = {s.name: s for s in space}
        for _ in range(10_000 // len(pairs) + 1):
            params = suggest([], space, rng)
            total += 1
            partial = {}
            for spec in space:
                if spec.active(partial):
                    if spec.name not in params or not by_name[spec.name].in_bounds(params[spec.name]):
                        violations += 1
                    partial[spec.name] = params.get(spec.name)
                elif spec.name in params:
                    violations += 1

    def peer(i, value):
        from hgnn.training import MetricsReport
        return TrialRecord(trial_index=i, params={}, state="complete",
                           intermediate=[(10, value)],
                           final=MetricsReport(accuracy=value, weighted_f1=value,
                                               mean_loss=1 - value, loss_std=0.1))

    peers = [peer(i, v) for i, v in enumerate([0.5, 0.6, 0.7])]
    me = TrialRecord(trial_index=9, params={})
    hand = (should_prune(me, peers, 10, 0.55, warmup_epochs=5, min_trials=3)
            and not should_prune(me, peers, 10, 0.60, warmup_epochs=5, min_trials=3)
            and not should_prune(me, peers, 10, 0.55, warmup_epochs=5, min_trials=10)
            and not should_prune(me, peers, 3, 0.55, warmup_epochs=5, min_trials=3))

    frac = tpe_beats_random_fraction()
    elapsed = time.perf_counter() - started
    _report(5, violations == 0 and total >= 10_000 and hand and frac >= 0.70
            and elapsed < 120,
            f"{total} fuzz samples, {violations} violations; pruner hand cases "
            f"{hand}; TPE wins {frac:.0%}; runtime {elapsed:.1f}s")


# -- criteria 6-8 + 10: scaled end-to-end runs ------------------------------------------------

E2E_EPOCHS = "25"
E2E_PATIENCE = "8"


def _run_balanced(tmp_root, tag):
    data_dir = tmp_root / f"balanced_{tag}"
    data_dir.mkdir(parents=True, exist_ok=True)
    assert cli_main(["synth", "--cases", "500", "--classes", "2", "--ratio", "1",
                     "--rule", "presence_of_activity", "--seed", "101",
                     "--out", str(data_dir)]) == 0
    enc = data_dir / "enc.json"
    assert cli_main(["encode", "--data", str(data_dir / "log.csv"),
                     "--schema", str(data_dir / "schema.json"),
                     "--out", str(enc), "--seed", "101"]) == 0
    study = data_dir / "study"
    assert cli_main(["tune", "--data", str(enc), "--arch", "one", "--op", "gin",
                     "--trials", "20", "--epochs", E2E_EPOCHS,
                     "--patience", E2E_PATIENCE, "--seed", "101",
                     "--policy", "balanced", "--out", str(study)]) == 0
    return study


def _run_imbalanced(tmp_root, tag):
    data_dir = tmp_root / f"imbalanced_{tag}"
    data_dir.mkdir(parents=True, exist_ok=True)
    assert cli_main(["synth", "--cases", "600", "--classes", "4", "--ratio", "20",
                     "--rule", "total_duration_threshold", "--seed", "202",
                     "--out", str(data_dir)]) == 0
    enc = data_dir / "enc.json"
    assert cli_main(["encode", "--data", str(data_dir / "log.csv"),
                     "--schema", str(data_dir / "schema.json"),
                     "--out", str(enc), "--seed", "202"]) == 0
    study = data_dir / "study"
    assert cli_main(["tune", "--data", str(enc), "--arch", "two", "--op", "gin",
                     "--trials", "20", "--epochs", E2E_EPOCHS,
                     "--patience", E2E_PATIENCE, "--seed", "202",
                     "--policy", "imbalanced", "--out", str(study)]) == 0
    return study


def _run_grid(tmp_root, tag):
    data_dir = tmp_root / f"grid_{tag}"
    data_dir.mkdir(parents=True, exist_ok=True)
    assert cli_main(["synth", "--cases", "100", "--classes", "2", "--ratio", "1",
                     "--seed", "303", "--out", str(data_dir)]) == 0
    enc = data_dir / "enc.json"
    assert cli_main(["encode", "--data", str(data_dir / "log.csv"),
                     "--schema", str(data_dir / "schema.json"),
                     "--out", str(enc), "--seed", "303"]) == 0
    out = data_dir / "grid"
    assert cli_main(["grid", "--data", str(enc), "--trials", "2",
                     "--epochs", "6", "--patience", "10", "--seed", "303",
                     "--policy", "balanced", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def e2e_root(tmp_path_factory):
    return tmp_path_factory.mktemp("acceptance_e2e")


def test_criterion_06_balanced_end_to_end(e2e_root):
    started = time.perf_counter()
    study = _run_balanced(e2e_root, "a")
    metrics = json.loads((study / "metrics.json").read_text())
    acc = metrics["retrained"]["accuracy"]
    elapsed = time.perf_counter() - started
    _report(6, acc >= 0.95 and elapsed < 600,
            f"retrained validation accuracy {acc:.4f}, runtime {elapsed:.0f}s")


def test_criterion_07_imbalanced_end_to_end(e2e_root):
    started = time.perf_counter()
    study = _run_imbalanced(e2e_root, "a")
    metrics = json.loads((study / "metrics.json").read_text())
    f1 = metrics["retrained"]["weighted_f1"]
    elapsed = time.perf_counter() - started
    _report(7, f1 >= 0.70 and elapsed < 900,
            f"retrained weighted F1 {f1:.4f}, runtime {elapsed:.0f}s")


def test_criterion_08_grid_plumbing(e2e_root):
    started = time.perf_counter()
    out = _run_grid(e2e_root, "a")
    csv_text = (out / "grid.csv").read_text()
    rows = csv_text.strip().splitlines()
    all_cells = len(rows) == 25 and not any(",,,," in r for r in rows[1:])
    figures = (out / "heatmap.svg").exists() and all(
        (out / f"radar_{op}.svg").exists()
        for op in ("gcn", "graph", "sage", "tag", "cheb", "gin"))
    svg = (out / "heatmap.svg").read_text()
    shown = sorted(re.findall(r">([0-9]\.[0-9]{3})</text>", svg))
    from hgnn.reporting import read_grid_csv
    cells = read_grid_csv(out / "grid.csv")
    expected = sorted(f"{v['accuracy']:.3f}" for v in cells.values() if v)
    fidelity = shown == expected and len(shown) == 24
    elapsed = time.perf_counter() - started
    _report(8, all_cells and figures and fidelity and elapsed < 600,
            f"24 cells complete {all_cells}, figures {figures}, "
            f"figure==CSV {fidelity}, runtime {elapsed:.0f}s")


def test_criterion_09_optional_dataset_reproduction(tmp_path):
    csv_path = os.environ.get("HGNN_TRAFFIC_FINES_CSV")
    schema_path = os.environ.get("HGNN_TRAFFIC_FINES_SCHEMA")
    if not csv_path or not schema_path:
        print("[SKIP] criterion 9: set HGNN_TRAFFIC_FINES_CSV and "
              "HGNN_TRAFFIC_FINES_SCHEMA to run the dataset reproduction")
        pytest.skip("real dataset not supplied")
    enc = tmp_path / "tf.json"
    assert cli_main(["encode", "--data", csv_path, "--schema", schema_path,
                     "--out", str(enc), "--seed", "1"]) == 0
    study = tmp_path / "tf_study"
    assert cli_main(["tune", "--data", str(enc), "--arch", "one", "--op", "gin",
                     "--trials", "50", "--epochs", "60", "--patience", "30",
                     "--seed", "1", "--out", str(study)]) == 0
    metrics = json.loads((study / "metrics.json").read_text())
    acc = metrics["retrained"]["accuracy"]
    _report(9, acc >= 0.97, f"validation accuracy {acc:.4f}")


def test_criterion_10_determinism(e2e_root):
    """Re-run criteria 6-8 with identical seeds; artifacts must be byte-identical."""
    # criteria 6-8 normally produce the "a" runs earlier in the session; if this
    # test is run in isolation, produce them here
    if not (e2e_root / "balanced_a" / "study" / "trials.jsonl").exists():
        _run_balanced(e2e_root, "a")
    if not (e2e_root / "imbalanced_a" / "study" / "trials.jsonl").exists():
        _run_imbalanced(e2e_root, "a")
    if not (e2e_root / "grid_a" / "grid" / "grid.csv").exists():
        _run_grid(e2e_root, "a")

    pairs = []
    study_b = _run_balanced(e2e_root, "b")
    pairs.append(("balanced", e2e_root / "balanced_a" / "study", study_b))
    study_i = _run_imbalanced(e2e_root, "b")
    pairs.append(("imbalanced", e2e_root / "imbalanced_a" / "study", study_i))
    grid_b = _run_grid(e2e_root, "b")
    pairs.append(("grid", e2e_root / "grid_a" / "grid", grid_b))

    mismatches = []
    for name, a_dir, b_dir in pairs:
        a_files = sorted(p.relative_to(a_dir) for p in a_dir.rglob("*") if p.is_file())
        b_files = sorted(p.relative_to(b_dir) for p in b_dir.rglob("*") if p.is_file())
        if a_files != b_files:
            mismatches.append(f"{name}: file lists differ")
            continue
        for rel in a_files:
            if (a_dir / rel).read_bytes() != (b_dir / rel).read_bytes():
                mismatches.append(f"{name}: {rel}")
    _report(10, not mismatches, "byte-identical re-runs" if not mismatches
            else f"mismatches: {mismatches}")
