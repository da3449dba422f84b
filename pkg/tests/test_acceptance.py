"""Release-gating acceptance suite.

Each test prints one ``ACCEPTANCE <n> <name>: PASS/FAIL`` line (visible
under ``pytest -s``) and then asserts, so a red run still reports every
criterion's status.  Statistical criteria (5-7) average over seeds 0-4 of
the standard synthetic fixture.
"""

import json
import math
import struct
import time

import numpy as np
import pytest

from attn_adapter.adapters import (
    AttentionAdapterParams,
    SupportSet,
    init_params,
    local_global_forward,
    memory_attn_forward,
    params_to_vector,
)
from attn_adapter.archive import (
    BadMagicError,
    ShapeMismatchError,
    UnsupportedVersionError,
    load_archive,
    save_archive,
)
from attn_adapter.cli import main as cli_main
from attn_adapter.episodes import (
    base_novel_split,
    derive_seed,
    sample_episode,
    subset_archive,
    synth_dataset,
)
from attn_adapter.losses import TipConfig, adapter_logits, tip_adapter_logits, zero_shot_logits
from attn_adapter.numerics import LinearLayer, grad_check
from attn_adapter.trainer import (
    TrainConfig,
    evaluate,
    evaluate_zero_shot,
    make_gradcheck_instance,
    train,
)

from conftest import make_fixture_archive

SEEDS = (0, 1, 2, 3, 4)


def report(number, name, ok, detail=""):
    status = "PASS" if ok else "FAIL"
    suffix = f" — {detail}" if detail else ""
    print(f"\nACCEPTANCE {number} {name}: {status}{suffix}")
    return ok


@pytest.fixture(scope="module")
def trained_runs():
    """One 10-epoch training per fixture seed, shared by criteria 5 and 6."""
    runs = []
    for seed in SEEDS:
        archive = make_fixture_archive(seed)
        t0 = time.time()
        params, history = train(archive, TrainConfig(seed=seed))
        runs.append({
            "seed": seed,
            "archive": archive,
            "params": params,
            "history": history,
            "train_time": time.time() - t0,
        })
    return runs


def test_criterion_1_gradient_fidelity():
    t0 = time.time()
    errors = []
    for seed in range(20):
        params, loss_and_grad = make_gradcheck_instance(
            seed, n_classes=5, k_shots=3, d=8, d_h=8, m_locals=4)
        errors.append(grad_check(loss_and_grad, params_to_vector(params), eps=1e-5))
    elapsed = time.time() - t0
    worst = max(errors)
    ok = worst < 1e-4 and elapsed < 60.0
    report(1, "gradient fidelity", ok,
           f"worst rel err {worst:.2e} over 20 instances in {elapsed:.1f}s")
    assert worst < 1e-4
    assert elapsed < 60.0


def test_criterion_2_zero_shot_identity_at_init(tmp_path):
    archive = make_fixture_archive(0)
    params = init_params(derive_seed(0, "init"), archive.d)
    episode = sample_episode(archive, range(archive.n_classes), 16, seed=3)
    w = archive.category_embeddings

    w_hat = memory_attn_forward(params.memory, w, episode.support)
    bitwise = np.array_equal(w_hat, w)
    for g, loc in zip(episode.query_globals[:50], episode.query_locals[:50]):
        f = local_global_forward(params.local_global, g, loc)
        bitwise &= np.array_equal(f, g)
        bitwise &= np.array_equal(adapter_logits(f, w_hat), zero_shot_logits(g, w))

    # through the CLI: an epochs-0 checkpoint must score exactly like zeroshot
    arc_path = tmp_path / "fix.atna"
    save_archive(arc_path, archive)
    ck = tmp_path / "init.atna"
    assert cli_main(["train", "--data", str(arc_path), "--out", str(ck),
                     "--epochs", "0"]) == 0
    r_attn = tmp_path / "attn.json"
    r_zs = tmp_path / "zs.json"
    assert cli_main(["eval", "--data", str(arc_path), "--checkpoint", str(ck),
                     "--method", "attn", "--report", str(r_attn)]) == 0
    assert cli_main(["eval", "--data", str(arc_path), "--method", "zeroshot",
                     "--report", str(r_zs)]) == 0
    acc_attn = json.loads(r_attn.read_text())["accuracy"]
    acc_zs = json.loads(r_zs.read_text())["accuracy"]

    ok = bitwise and acc_attn == acc_zs
    report(2, "zero-shot identity at init", ok,
           f"bitwise logits equal; cmd_eval attn=zeroshot={acc_zs:.4f}")
    assert bitwise
    assert acc_attn == acc_zs


def test_criterion_3_baseline_reductions():
    archive = make_fixture_archive(0)
    episode = sample_episode(archive, range(archive.n_classes), 16, seed=1)
    w = archive.category_embeddings
    sup = episode.support

    alpha_zero_exact = True
    beta_zero_argmax = True
    for g in archive.global_features:
        zs = zero_shot_logits(g, w[list(episode.class_subset)])
        tip0 = tip_adapter_logits(g, w[list(episode.class_subset)], sup,
                                  TipConfig(alpha=0.0, beta=5.5))
        alpha_zero_exact &= np.array_equal(tip0, zs)
        tipb = tip_adapter_logits(g, w[list(episode.class_subset)], sup,
                                  TipConfig(alpha=1.0, beta=0.0))
        beta_zero_argmax &= int(tipb.argmax()) == int(zs.argmax())

    ok = alpha_zero_exact and beta_zero_argmax
    report(3, "baseline reductions", ok,
           f"alpha=0 exact on {archive.n_samples} samples; beta=0 argmax preserved")
    assert alpha_zero_exact
    assert beta_zero_argmax


def _brute_force_refine(wq, bq, wk, proj_w, proj_b, queries, keys_values, d_h):
    """Direct loop evaluation of the attention equations, kept independent
    of the library implementation."""
    out = []
    for q_row in queries:
        q = wq @ q_row + bq
        scores = [ (wk @ kv) @ q / math.sqrt(d_h) for kv in keys_values ]
        mx = max(scores)
        exps = [math.exp(s - mx) for s in scores]
        total = sum(exps)
        weights = [e / total for e in exps]
        agg = sum(wgt * kv for wgt, kv in zip(weights, keys_values))
        gate = proj_w @ q_row + proj_b
        out.append(q_row + gate * agg)
    return np.array(out)


def test_criterion_4_attention_oracle():
    d = 2
    wq = np.eye(d)
    bq = np.zeros(d)
    wk = np.eye(d)
    proj_w = np.zeros((d, d))
    proj_b = np.ones(d)
    block = AttentionAdapterParams(
        mlp_q=LinearLayer(wq, bq),
        mlp_k=LinearLayer(wk, bias=None),
        projector=LinearLayer(proj_w, proj_b),
    )
    w = np.eye(2)
    rows = np.eye(2)
    sup = SupportSet(rows, np.eye(2), 2, 1)

    ours_mem = memory_attn_forward(block, w, sup)
    ref_mem = _brute_force_refine(wq, bq, wk, proj_w, proj_b, w, rows, d)
    mem_err = np.abs(ours_mem - ref_mem).max()

    g = np.array([1.0, 0.0])
    ours_lg = local_global_forward(block, g, rows)
    ref_lg = _brute_force_refine(wq, bq, wk, proj_w, proj_b, [g], rows, d)[0]
    lg_err = np.abs(ours_lg - ref_lg).max()

    # anchor against the closed form a = e^{1/sqrt(2)} / (e^{1/sqrt(2)} + 1)
    a = math.exp(1 / math.sqrt(2)) / (math.exp(1 / math.sqrt(2)) + 1.0)
    closed = np.abs(ours_mem[0] - [1 + a, 1 - a]).max()

    ok = mem_err < 1e-10 and lg_err < 1e-10 and closed < 1e-10
    report(4, "attention correctness oracle", ok,
           f"memory err {mem_err:.1e}, local-global err {lg_err:.1e}")
    assert mem_err < 1e-10
    assert lg_err < 1e-10
    assert closed < 1e-10


def test_criterion_5_few_shot_improvement(trained_runs):
    lifts = []
    for run in trained_runs:
        seed, archive = run["seed"], run["archive"]
        zs_mean = float(archive.per_class_zero_shot_acc.mean())
        assert 0.55 <= zs_mean <= 0.75, f"fixture out of band at seed {seed}"
        es = derive_seed(seed, "eval")
        trained = evaluate(run["params"], archive, None, 16, es).accuracy
        zs = evaluate_zero_shot(archive, None, 16, es).accuracy
        lifts.append(trained - zs)
        assert run["train_time"] < 120.0

    mean_lift = float(np.mean(lifts))
    ok = mean_lift >= 0.10
    report(5, "few-shot improvement", ok,
           f"mean lift {mean_lift:+.3f} over seeds {list(SEEDS)} "
           f"(per-seed {['%+.3f' % l for l in lifts]})")
    assert mean_lift >= 0.10


def test_criterion_6_cross_archive_generalization(trained_runs):
    diffs = []
    for run in trained_runs:
        seed = run["seed"]
        fresh = synth_dataset(derive_seed(seed, "fresh"), 10, 16, 50, 64, 8, 0.22)
        es = derive_seed(seed, "xeval")
        before = params_to_vector(run["params"]).copy()
        trained = evaluate(run["params"], fresh, None, 16, es).accuracy
        assert np.array_equal(before, params_to_vector(run["params"]))  # frozen
        zs = evaluate_zero_shot(fresh, None, 16, es).accuracy
        diffs.append(trained - zs)

    mean_diff = float(np.mean(diffs))
    ok = mean_diff > 0.0
    report(6, "cross-archive generalization", ok,
           f"mean accuracy delta {mean_diff:+.3f} on fresh archives")
    assert mean_diff > 0.0


def test_criterion_7_base_novel_protocol():
    trained_nov, zs_nov = [], []
    partitions_ok = True
    for seed in SEEDS:
        archive = make_fixture_archive(seed)
        base, novel = base_novel_split(archive.per_class_zero_shot_acc)
        partitions_ok &= sorted(base + novel) == list(range(archive.n_classes))
        params, _ = train(subset_archive(archive, base), TrainConfig(seed=seed))
        es = derive_seed(seed, "neval")
        trained_nov.append(evaluate(params, archive, novel, 16, es).accuracy)
        zs_nov.append(evaluate_zero_shot(archive, novel, 16, es).accuracy)

    mean_trained = float(np.mean(trained_nov))
    mean_zs = float(np.mean(zs_nov))
    ok = partitions_ok and mean_trained >= mean_zs
    report(7, "base/novel protocol", ok,
           f"novel accuracy {mean_trained:.3f} vs zero-shot {mean_zs:.3f}; "
           f"split partitions exactly")
    assert partitions_ok
    assert mean_trained >= mean_zs


def test_criterion_8_determinism(tmp_path):
    # identical flags and seeds, run twice over the same paths
    flags = ["--n-classes", "5", "--k-support", "6", "--q-query", "8",
             "--dim", "32", "--m-locals", "3"]
    arc = tmp_path / "arc.atna"
    ck = tmp_path / "ck.atna"
    metrics = tmp_path / "m.json"
    history = tmp_path / "ck.atna.history.jsonl"

    def run_all():
        assert cli_main(["synth", "--out", str(arc), "--seed", "9"] + flags) == 0
        assert cli_main(["train", "--data", str(arc), "--out", str(ck),
                         "--epochs", "3", "--k", "6", "--seed", "9"]) == 0
        assert cli_main(["eval", "--data", str(arc), "--checkpoint", str(ck),
                         "--method", "attn", "--k", "6", "--seed", "9",
                         "--report", str(metrics)]) == 0
        return (arc.read_bytes(), ck.read_bytes(),
                metrics.read_bytes(), history.read_bytes())

    first = run_all()
    second = run_all()

    labels = ("archive", "checkpoint", "metrics", "history")
    same = [a == b for a, b in zip(first, second)]
    ok = all(same)
    report(8, "determinism", ok,
           "byte-identical " + ", ".join(l for l, s in zip(labels, same) if s))
    assert ok, f"mismatch in {[l for l, s in zip(labels, same) if not s]}"


def test_criterion_9_format_robustness(tmp_path):
    archive = synth_dataset(2, 4, 3, 3, 16, 2, 0.22)
    p1, p2 = tmp_path / "a.atna", tmp_path / "b.atna"
    save_archive(p1, archive)
    save_archive(p2, load_archive(p1))
    round_trip = p1.read_bytes() == p2.read_bytes()

    data = bytearray(p1.read_bytes())

    bad_magic = bytearray(data)
    bad_magic[:4] = b"XXXX"
    (tmp_path / "magic.atna").write_bytes(bytes(bad_magic))
    with pytest.raises(BadMagicError):
        load_archive(tmp_path / "magic.atna")

    bad_version = bytearray(data)
    bad_version[4:8] = struct.pack("<I", 77)
    (tmp_path / "version.atna").write_bytes(bytes(bad_version))
    with pytest.raises(UnsupportedVersionError):
        load_archive(tmp_path / "version.atna")

    hlen = struct.unpack("<Q", bytes(data[8:16]))[0]
    header = json.loads(bytes(data[16:16 + hlen]))
    header["n_classes"] = 5  # header now disagrees with the payload shapes
    blob = json.dumps(header).encode()
    shape_file = tmp_path / "shape.atna"
    with open(shape_file, "wb") as fh:
        fh.write(b"ATNA")
        fh.write(struct.pack("<I", 1))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(bytes(data[16 + hlen:]))
    with pytest.raises(ShapeMismatchError):
        load_archive(shape_file)

    ok = round_trip
    report(9, "format robustness", ok,
           "bit-exact round trip; magic/version/shape corruptions rejected")
    assert round_trip
