import math
import os

import numpy as np
import pytest

from crossrec.errors import ConfigError
from crossrec.experiment import (
    METHODS,
    ExperimentConfig,
    config_from_mapping,
    derive_seed,
    parse_config_file,
    run_experiment,
)

TINY = dict(
    synth_users=60, synth_source_items=50, synth_target_items=50,
    synth_k_true=4, synth_overlap=0.6, synth_density=0.08,
    min_overlap_interactions=2, min_other_interactions=2,
    embed_dim=8, embed_epochs=12, embed_lr=0.01, embed_batch=256,
    map_epochs=8, map_lr=0.01, map_batch=16,
    eval_cutoffs=(5, 10), eval_repeats=2, eval_negatives=30,
)


def tiny_config(method, out, seed=5, **over):
    kw = dict(TINY)
    kw.update(over)
    return ExperimentConfig(method=method, out_dir=str(out), seed=seed,
                            **kw)


# -- config parsing ----------------------------------------------------------

def test_parse_config_file_and_mapping(tmp_path):
    p = tmp_path / "exp.cfg"
    p.write_text("# demo\n"
                 "method=SSCDR\n"
                 "phi=0.25\n"
                 "hops=3\n"
                 "lambda=0.75\n"
                 "embed.dim=16\n"
                 "eval.cutoffs=5,10,20\n")
    cfg = config_from_mapping(parse_config_file(p))
    assert cfg.method == "SSCDR"
    assert cfg.phi == 0.25
    assert cfg.hops == 3
    assert cfg.map_lam == 0.75
    assert cfg.embed_dim == 16
    assert cfg.eval_cutoffs == (5, 10, 20)


def test_unknown_config_key_fails_fast():
    with pytest.raises(ConfigError):
        config_from_mapping({"not_a_key": "1"})


def test_bad_config_value_fails_fast():
    with pytest.raises(ConfigError):
        config_from_mapping({"hops": "two"})


def test_validate_rejects_unknown_method(tmp_path):
    cfg = tiny_config("SVD++", tmp_path)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_validate_rejects_sscdr_without_hops(tmp_path):
    cfg = tiny_config("SSCDR", tmp_path, hops=0)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_validate_requires_exactly_one_data_source(tmp_path):
    cfg = tiny_config("ITEMPOP", tmp_path)
    cfg.scenario_dir = "somewhere"
    with pytest.raises(ConfigError):
        cfg.validate()
    cfg = tiny_config("ITEMPOP", tmp_path, synth_users=0)
    with pytest.raises(ConfigError):
        cfg.validate()


def test_derive_seed_slots_are_stable_and_distinct():
    a = [derive_seed(123, k) for k in range(7)]
    b = [derive_seed(123, k) for k in range(7)]
    assert a == b
    assert len(set(a)) == 7
    assert derive_seed(124, 0) != a[0]


# -- full runs ----------------------------------------------------------------

def test_run_itempop_writes_all_artifacts(tmp_path):
    out = tmp_path / "pop"
    report = run_experiment(tiny_config("ITEMPOP", out))
    assert report.repeats == 2
    avg = report.averaged()
    assert 0.0 <= avg[("HR", 10)] <= 1.0
    assert (out / "report.tsv").exists()
    assert (out / "scenario" / "meta.txt").exists()
    manifest = (out / "manifest.txt").read_text()
    assert manifest.startswith("status=complete\n")
    assert "config.method=ITEMPOP" in manifest
    assert "sha256.report.tsv=" in manifest


@pytest.mark.parametrize("method", [m for m in METHODS if m != "ITEMPOP"])
def test_every_trained_method_runs_end_to_end(tmp_path, method):
    out = tmp_path / method
    report = run_experiment(tiny_config(method, out))
    avg = report.averaged()
    assert 0.0 <= avg[("HR", 10)] <= 1.0
    if method in ("BPR", "CML"):
        assert (out / "unified_embeddings.txt").exists()
    else:
        assert (out / "source_embeddings.txt").exists()
        assert (out / "target_embeddings.txt").exists()
        assert (out / "mapping.txt").exists()


def test_sscdr_with_lambda_zero_reduces_to_emcdr_cml(tmp_path):
    a = tiny_config("SSCDR", tmp_path / "a", map_lam=0.0, hops=1)
    b = tiny_config("EMCDR-CML", tmp_path / "b")
    run_experiment(a)
    run_experiment(b)
    ma = (tmp_path / "a" / "mapping.txt").read_bytes()
    mb = (tmp_path / "b" / "mapping.txt").read_bytes()
    assert ma == mb
    for name in ("source_embeddings.txt", "target_embeddings.txt"):
        assert (tmp_path / "a" / name).read_bytes() == \
            (tmp_path / "b" / name).read_bytes()


def test_rerunning_reproduces_reports_byte_for_byte(tmp_path):
    out = tmp_path / "again"
    run_experiment(tiny_config("SSCDR", out, hops=2))
    first_report = (out / "report.tsv").read_bytes()
    first_manifest = (out / "manifest.txt").read_bytes()
    run_experiment(tiny_config("SSCDR", out, hops=2))
    assert (out / "report.tsv").read_bytes() == first_report
    assert (out / "manifest.txt").read_bytes() == first_manifest


def test_phi_controls_supervision_size(tmp_path):
    lo = tiny_config("EMCDR-CML", tmp_path / "lo", phi=0.25)
    from crossrec.experiment import prepare_scenario
    scen_lo = prepare_scenario(lo)
    hi = tiny_config("EMCDR-CML", tmp_path / "hi", phi=1.0)
    scen_hi = prepare_scenario(hi)
    assert scen_lo.test_users == scen_hi.test_users
    # counts use round-half-up, not banker's rounding
    pool = len(scen_lo.overlap_users) - len(scen_lo.test_users)
    assert len(scen_lo.train_overlap_users) == math.floor(0.25 * pool + 0.5)
    assert set(scen_lo.train_overlap_users) <= \
        set(scen_hi.train_overlap_users)
