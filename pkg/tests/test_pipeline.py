import numpy as np
import pytest

from omad.config import PipelineConfig
from omad.dataset import generate_artifact_corpus
from omad.dsp import WindowConfig
from omad.nn import artifact_mlp
from omad.pipeline import (
    MissingDetector,
    Preprocessor,
    RateMismatch,
    Setting,
    artifact_windows,
    compression_pair,
    detector_spans,
    load_main,
    load_model,
    main_features,
    main_windows,
    majority_vote,
    removal_rule,
    run_setting,
    run_sweep,
    save_model,
    sidecar_path,
    tag_windows,
    train_detector,
    trial_split,
)


@pytest.fixture(scope="module")
def tiny_cfg():
    return PipelineConfig.from_dict({
        "data": {"synthetic_subjects_per_group": 3, "synthetic_trials_per_subject": 4,
                 "artifact_subjects": 1, "artifact_trials_per_kind": 1},
        "artifact": {"hidden": [8], "epochs": 3, "finetune_epochs": 2},
        "model": {"mlp_hidden": [16, 8], "dropout_layers": 1, "cnn_conv": [2, 2], "cnn_hidden": 4},
        "training": {"epochs": 2},
        "pruning": {"finetune_epochs": 2},
        "eval": {"reps": 2, "warmup": 0, "batch": 8, "sweep": [0.0, 0.5]},
    })


@pytest.fixture(scope="module")
def corpus(tiny_cfg):
    recs, blinks = load_main(tiny_cfg, seed=0)
    return recs, blinks, main_windows(recs, tiny_cfg)


def test_preprocessor_kinds_and_json():
    rng = np.random.default_rng(0)
    x = rng.normal(3, 2, size=(50, 4, 16))
    z = Preprocessor.fit("window_zscore", x).apply(x)
    assert z.shape == (50, 64) and z.dtype == np.float32
    np.testing.assert_allclose(z.reshape(50, 4, 16).mean(axis=-1), 0, atol=1e-5)
    ch = Preprocessor.fit("channel", x, layout="channels")
    out = ch.apply(x)
    assert out.shape == x.shape
    np.testing.assert_allclose(out.mean(axis=(0, 2)), 0, atol=1e-5)
    np.testing.assert_allclose(out.std(axis=(0, 2)), 1, atol=1e-4)
    rows = rng.normal(size=(30, 5))
    col = Preprocessor.fit("column", rows, columns=[0, 3])
    assert col.apply(rows).shape == (30, 2)
    back = Preprocessor.from_json(col.to_json())
    np.testing.assert_array_equal(back.apply(rows), col.apply(rows))


def test_model_and_sidecar_round_trip(tmp_path):
    net = artifact_mlp(16)
    prep = Preprocessor("window_zscore", extra={"note": 1})
    path = tmp_path / "d.omad"
    save_model(net, prep, path)
    assert sidecar_path(path).name == "d.omad.prep.json"
    net2, prep2 = load_model(path)
    assert prep2.extra == {"note": 1}
    sidecar_path(path).unlink()
    with pytest.raises(FileNotFoundError):
        load_model(path)


def test_artifact_window_labels_overlap_rule():
    recs = generate_artifact_corpus(seed=0, subjects=1, trials_per_kind=1)
    aw = artifact_windows(recs, WindowConfig(128, 0.8))
    n_per_rec = 47 * 14
    assert len(aw.x) == 2 * n_per_rec
    off = np.arange(47) * 25
    expected = (off < 7 * 128) & (off + 128 > 4 * 128)
    np.testing.assert_array_equal(aw.labels[: n_per_rec : 14], expected)


def test_removal_rule():
    f = np.array([0.0, 0.1, 0.25, 0.5])
    assert removal_rule(f, 0.25).tolist() == [False, False, True, True]
    assert removal_rule(f, 0.0).tolist() == [False, True, True, True]


def test_majority_vote_ties_go_to_zero():
    votes, order = majority_vote(np.array([1, 0, 1, 1, 0]), ["a", "a", "b", "b", "c"])
    assert order == ["a", "b", "c"] and votes.tolist() == [0, 1, 0]


def test_windows_and_split(corpus, tiny_cfg):
    recs, _, mw = corpus
    assert len(recs) == 24
    assert len(mw) == 24 * WindowConfig(128, 0.8).count(256)
    test = trial_split(mw, tiny_cfg, seed=0)
    test_keys = {k for k, t in zip(mw.keys, test) if t}
    train_keys = {k for k, t in zip(mw.keys, test) if not t}
    assert not test_keys & train_keys


def test_detector_spans_resample_and_center(corpus, tiny_cfg):
    recs, _, mw = corpus
    spans = detector_spans(recs, mw.select(np.arange(len(mw)) < 3), tiny_cfg)
    assert spans.shape == (3, 64, 128)
    bad = tiny_cfg.override("dsp.detector_rate_hz", 100.0)
    with pytest.raises(RateMismatch):
        detector_spans(recs, mw, bad)


def test_end_to_end_small(corpus, tiny_cfg, tmp_path):
    recs, _, mw = corpus
    det = train_detector(generate_artifact_corpus(seed=0, subjects=2, trials_per_kind=1), tiny_cfg, 0,
                         with_pruning=True)
    assert [r.pruned for r in det.reports] == [False, True]
    tags = tag_windows(det.net, det.prep, recs, mw, tiny_cfg)
    assert tags.flagged_fraction.shape == (len(mw),)
    with pytest.raises(MissingDetector):
        tag_windows(None, None, recs, mw, tiny_cfg)
    feats = main_features(mw)
    test = trial_split(mw, tiny_cfg, 0)
    reps = run_setting(Setting.ALL_NO_REMOVAL, mw, feats, test, tiny_cfg, 0, models=("RF", "MLP7"))
    assert [r.model for r in reps] == ["RF", "MLP7"]
    assert all(r.setting == "AllFeatures_NoArtifactRemoval" for r in reps)
    assert 0 <= reps[1].extra["trial_accuracy"] <= 1
    with pytest.raises(MissingDetector):
        run_setting(Setting.ALL_WITH_REMOVAL, mw, feats, test, tiny_cfg, 0)
    rows, tm, pruned = compression_pair("cnn", mw, test, tiny_cfg, 0)
    assert rows[1].model_size_bytes < rows[0].model_size_bytes
    sweep = run_sweep(tm, mw.x[test], mw.group[test], tiny_cfg, 0)
    assert [r.sparsity for r in sweep] == [0.0, 0.5] and not any(r.error for r in sweep)
