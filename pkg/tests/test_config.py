import pytest

from facedepth.config import load_config, parse_config
from facedepth.models import ConfigError

MINIMAL = """
[data]
root = data
[output]
dir = out
"""


def test_minimal_config_takes_defaults(tmp_path):
    cfg = parse_config(MINIMAL, tmp_path)
    assert cfg.data.root == str(tmp_path / "data") and cfg.output_dir == str(tmp_path / "out")
    assert cfg.train.lambda_mse == 100.0 and cfg.train.lr == 2e-4
    assert cfg.data.test_subjects == {10, 14, 16, 20}
    assert (cfg.crop.fx, cfg.crop.rx) == (365.0, 320.0)
    assert cfg.checkpoint_every == 1


def test_full_config(tmp_path):
    text = """
[data]
root = crops
test_subjects = 5, 6
d_min = 500  # inline comment
d_max = 1500
[train]
epochs = 3
batch_size = 8
width_multiplier = 0.125
image_size = 32
lambda_mse = 10
[verifier]
epochs = 4
image_size = 48
[pairs]
n_pairs = 100
balance = 0.4
[crop]
fx = 370
fy = 371
[output]
dir = run
checkpoint_every = 2
"""
    (tmp_path / "run.ini").write_text(text)
    cfg = load_config(tmp_path / "run.ini")
    assert cfg.data.test_subjects == {5, 6} and cfg.data.d_min == 500.0
    assert (cfg.train.epochs, cfg.train.batch_size, cfg.train.image_size, cfg.train.lambda_mse) == (3, 8, 32, 10.0)
    assert (cfg.verifier.epochs, cfg.verifier.image_size) == (4, 48)
    assert (cfg.pairs.n_pairs, cfg.pairs.balance) == (100, 0.4)
    assert (cfg.crop.fx, cfg.crop.fy) == (370.0, 371.0)
    assert cfg.checkpoint_every == 2


def config_text(**sections):
    """Minimal valid config plus extra ``key = value`` lines per section."""
    body = {"data": "root = d\n", "output": "dir = o\n"}
    for name, lines in sections.items():
        body[name] = body.get(name, "") + lines
    return "".join(f"[{name}]\n{lines}" for name, lines in body.items())


@pytest.mark.parametrize(
    "sections, match",
    [
        (dict(train="epochz = 3\n"), "epochz"),
        (dict(bogus="x = 1\n"), "bogus"),
        (dict(train="epochs = three\n"), "epochs"),
        (dict(train="width_multiplier = 0.3\n"), "multiplier"),
        (dict(train="image_size = 40\n"), "image_size"),
        (dict(data="d_min = 900\nd_max = 100\n"), "depth range"),
        (dict(data="test_subjects = a, b\n"), "test_subjects"),
        (dict(output="checkpoint_every = 0\n"), "checkpoint_every"),
        (dict(output="colour = red\n"), "colour"),
        (dict(crop="fx = -1\n"), "fx"),
        (dict(pairs="balance = 2\n"), "balance"),
    ],
)
def test_invalid_values_are_rejected(tmp_path, sections, match):
    with pytest.raises(ConfigError, match=match):
        parse_config(config_text(**sections), tmp_path)


@pytest.mark.parametrize("text", ["[output]\ndir = o\n", "[data]\nroot = d\n", "no section header\n"])
def test_required_fields_and_syntax(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_missing_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.ini")
