import pytest

from localsgd.config import ConfigError, RunConfig, build_run, load_config, parse_config, validate


def test_defaults_roundtrip():
    cfg = RunConfig(dataset="synthetic:two-class-2d:100:1", objective="mlp", milestones=(0.3,), f_star=0.25)
    again = parse_config(cfg.to_text())
    assert again == cfg


def test_parse_comments_and_types():
    cfg = parse_config("""
# a comment
K = 4   # trailing
seeds = 1,2,5
replacement = yes
f_star =
lr = 1e-2
""")
    assert cfg.K == 4 and cfg.seeds == (1, 2, 5) and cfg.replacement is True
    assert cfg.f_star is None and cfg.lr == 0.01


@pytest.mark.parametrize("text", ["K = 2\nK = 3", "nokey", "bogus = 1", "K = two", "replacement = maybe"])
def test_parse_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_overrides():
    cfg = RunConfig().with_overrides(["K=8", "codec = ef-sign"])
    assert cfg.K == 8 and cfg.codec == "ef-sign"
    with pytest.raises(ConfigError):
        RunConfig().with_overrides(["K"])


@pytest.mark.parametrize("changes", [
    dict(K=6, blocks=4),
    dict(H_kind="post-local", lr_kind="constant"),
    dict(momentum=0.9),
    dict(momentum=0.9, momentum_style="heavy-ball", momentum_mode="global"),
    dict(objective="quadratic"),
    dict(codec="topk"),
    dict(switch_round="soon", H_kind="post-local"),
])
def test_validation(changes):
    base = dict(dataset="synthetic:sparse-binary:64:5:0")
    with pytest.raises(ConfigError):
        validate(RunConfig(**{**base, **changes}))


def test_missing_dataset_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("dataset = missing.svm\n")
    cfg = load_config(str(p))
    assert cfg.resolve_path(cfg.dataset) == str(tmp_path / "missing.svm")
    with pytest.raises(ConfigError):
        build_run(cfg)


def test_relative_dataset_path(tmp_path):
    (tmp_path / "d.svm").write_text("1 1:1 2:0.5\n-1 2:1\n1 1:-1\n-1 1:0.5 2:0.5\n")
    p = tmp_path / "run.cfg"
    p.write_text("dataset = d.svm\nK = 2\nB_loc = 1\nepochs = 2\n")
    run = build_run(load_config(str(p)))
    assert run.data.N == 4 and run.budget == 8
    assert run.objective.lam == 0.25
    assert run.run().last.samples == 8


def test_too_many_workers():
    with pytest.raises(ConfigError):
        build_run(RunConfig(dataset="synthetic:sparse-binary:4:5:0", K=8))
