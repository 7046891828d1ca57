import numpy as np
import pytest

from ogsslb.config import (
    ConfigError,
    default_config_text,
    fit_config_from,
    format_config,
    load_config,
    parse_config_text,
    sections_from,
    simulation_config_from,
    study_config_from,
)
from ogsslb.io import (
    atomic_write_text,
    read_biclusters,
    read_expression,
    read_outcomes,
    write_biclusters,
    write_expression,
    write_outcomes,
)
from ogsslb.model import BiclusterSet, DimensionMismatch, DuplicateId, ExpressionMatrix, FitConfig, OutcomeMatrix, ValidationError
from ogsslb.simulation import SimulationConfig


# --- configuration -------------------------------------------------------------------------


def test_default_config_round_trip():
    sections = parse_config_text(default_config_text())
    assert fit_config_from(sections) == FitConfig()
    assert simulation_config_from(sections) == SimulationConfig()


def test_custom_config_round_trip():
    text = """
[fit]
K_init = 7
prior_variant = PY
omega0_ladder = 1, 10, 100
xi = 0.5
outcome_guided = false

[soul]
c0 = 8
log_scale = no

[study]
n_replicates = 3
methods = SSLB
variants = BB, IBP
"""
    sections = parse_config_text(text)
    cfg = fit_config_from(sections)
    assert cfg.K_init == 7 and cfg.prior_variant == "PY" and cfg.omega0_ladder == (1.0, 10.0, 100.0)
    assert cfg.omega0_tilde_ladder == (5.0, 5.0, 5.0)
    assert cfg.xi == 0.5 and cfg.outcome_guided is False
    assert cfg.soul.c0 == 8.0 and cfg.soul.log_scale is False
    study = study_config_from(sections)
    assert study.n_replicates == 3 and study.methods == ("SSLB",) and study.variants == ("BB", "IBP")
    again = parse_config_text(format_config(sections_from(fit=cfg, study=study)))
    assert fit_config_from(again) == cfg


@pytest.mark.parametrize(
    "text,line",
    [
        ("[fit]\nK_init = 3\nbogus = 1\n", 3),
        ("[fit]\n\nK_init = three\n", 3),
        ("[simulation]\nN = 300\n[nonsense]\n", 3),
        ("[soul]\nlog_scale = maybe\n", 2),
    ],
)
def test_config_errors_name_the_line(text, line):
    with pytest.raises(ConfigError, match=f"line {line}"):
        parse_config_text(text, "cfg.ini")


def test_config_semantic_errors():
    with pytest.raises(ConfigError):
        fit_config_from(parse_config_text("[fit]\nprior_variant = DP\n"))
    with pytest.raises(ConfigError):
        simulation_config_from(parse_config_text("[simulation]\nepsilon = 2\n"))
    with pytest.raises(ConfigError):
        study_config_from(parse_config_text("[study]\nn_replicates = 0\n"))


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.ini")


def test_unparseable_config():
    with pytest.raises(ConfigError):
        parse_config_text("K_init = 3\n")


# --- files -------------------------------------------------------------------------


def test_expression_round_trip_exact(tmp_path, rng):
    x = ExpressionMatrix(rng.normal(size=(4, 3)), ["s1", "s2", "s3", "s4"], ["g1", "g2", "g3"])
    write_expression(tmp_path / "x.csv", x)
    back = read_expression(tmp_path / "x.csv")
    assert np.array_equal(back.values, x.values)
    assert list(back.sample_ids) == list(x.sample_ids) and list(back.gene_ids) == list(x.gene_ids)


def test_expression_tsv_and_errors(tmp_path):
    (tmp_path / "x.tsv").write_text("sample_id\tg1\tg2\na\t1\t2\nb\t3\t4\n")
    assert read_expression(tmp_path / "x.tsv").values.shape == (2, 2)
    (tmp_path / "bad.csv").write_text("sample_id,g1\na,oops\n")
    with pytest.raises(ValidationError):
        read_expression(tmp_path / "bad.csv")
    (tmp_path / "dup.csv").write_text("sample_id,g1\na,1\na,2\n")
    with pytest.raises(DuplicateId):
        read_expression(tmp_path / "dup.csv")
    (tmp_path / "ragged.csv").write_text("sample_id,g1,g2\na,1\n")
    with pytest.raises(ValidationError):
        read_expression(tmp_path / "ragged.csv")


def test_outcome_round_trip_and_reordering(tmp_path):
    y = OutcomeMatrix.from_labels([0, 2, 1, 0], 3, ["HC", "D1", "D2"])
    write_outcomes(tmp_path / "y.csv", y, ["a", "b", "c", "d"])
    labels = ["HC", "D1", "D2"]
    back = read_outcomes(tmp_path / "y.csv", ["a", "b", "c", "d"], class_labels=labels)
    assert np.array_equal(back.values, y.values)
    # without explicit labels classes are ordered by first appearance
    assert read_outcomes(tmp_path / "y.csv").class_labels == ["HC", "D2", "D1"]
    shuffled = read_outcomes(tmp_path / "y.csv", ["d", "c", "b", "a"], class_labels=labels)
    assert np.array_equal(shuffled.values, y.values[::-1])


def test_outcome_reference_class(tmp_path):
    (tmp_path / "y.csv").write_text("sample_id,class_label\na,D1\nb,HC\nc,D2\n")
    y = read_outcomes(tmp_path / "y.csv", reference_class="HC")
    assert y.class_labels[0] == "HC" and y.reference_class == 0
    with pytest.raises(ValidationError):
        read_outcomes(tmp_path / "y.csv", reference_class="XX")


def test_outcome_sample_mismatch(tmp_path):
    (tmp_path / "y.csv").write_text("sample_id,class_label\na,HC\nb,D1\n")
    with pytest.raises(DimensionMismatch):
        read_outcomes(tmp_path / "y.csv", ["a", "b", "c"])
    (tmp_path / "h.csv").write_text("id,label\na,HC\n")
    with pytest.raises(ValidationError):
        read_outcomes(tmp_path / "h.csv")


def test_bicluster_file_round_trip(tmp_path):
    s = BiclusterSet((({0, 3}, {1, 2}), ({5}, {7})))
    write_biclusters(tmp_path / "b.json", s)
    assert read_biclusters(tmp_path / "b.json") == s
    (tmp_path / "list.json").write_text('[{"sample_indices": [1], "gene_indices": [2]}]')
    assert read_biclusters(tmp_path / "list.json").K_hat == 1


def test_atomic_write_leaves_no_temp_on_failure(tmp_path):
    atomic_write_text(tmp_path / "ok.txt", "hello")
    with pytest.raises(TypeError):
        atomic_write_text(tmp_path / "bad.txt", 123)
    assert sorted(p.name for p in tmp_path.iterdir()) == ["ok.txt"]


def test_shipped_default_config_matches_code():
    from pathlib import Path

    from ogsslb.evaluation import StudyConfig

    path = Path(__file__).resolve().parents[1] / "docs" / "default_config.ini"
    sections = load_config(path)
    assert fit_config_from(sections) == FitConfig()
    assert simulation_config_from(sections) == SimulationConfig()
    assert study_config_from(sections) == StudyConfig()
