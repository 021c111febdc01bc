from pathlib import Path

import numpy as np
import pytest

from deligan.config import ExperimentConfig, dump_config, load_config, parse_config, substream
from deligan.nets import ConfigError

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

MINIMAL = "version: 1\nseed: 3\n"


class TestParse:
    def test_minimal_uses_defaults(self):
        cfg = parse_config(MINIMAL)
        assert cfg.seed == 3 and cfg.variant == "deligan"
        assert (cfg.latent.N, cfg.latent.K, cfg.latent.sigma0, cfg.latent.lam) == (50, 2, 0.2, 1.0)
        assert cfg.train.batch == 64 and cfg.train.iterations == 8000

    def test_lambda_key(self):
        assert parse_config(MINIMAL + "latent:\n  lambda: 0.5\n").latent.lam == 0.5

    def test_dump_round_trip(self):
        cfg = parse_config(MINIMAL + "variant: moe\nlatent:\n  lambda: 0.25\n")
        assert parse_config(dump_config(cfg)) == cfg

    @pytest.mark.parametrize("text,line,needle", [
        ("version: 1\n", "", "seed"),
        ("version: 1\nseed: x\n", "line 2", "seed"),
        ("version: 2\nseed: 1\n", "line 1", "version"),
        (MINIMAL + "colour: red\n", "line 3", "unknown field 'colour'"),
        (MINIMAL + "latent:\n  N: 5\n  spread: 2\n", "line 5", "latent.spread"),
        (MINIMAL + "variant: vae\n", "line 3", "unknown variant"),
        (MINIMAL + "latent:\n  N: 0\n", "line 4", "latent.N"),
        (MINIMAL + "latent:\n  lambda: -1\n", "line 4", "lambda"),
        (MINIMAL + "data:\n  preset: trimodal\n", "line 4", "preset"),
        (MINIMAL + "data:\n  kind: mnist\n  images: nope.idx\n", "line 5", "file not found"),
        (MINIMAL + "train:\n  batch: 0\n", "line 4", "batch"),
        (MINIMAL + "train: [1, 2]\n", "line 3", "mapping"),
        ("version: 1\nseed: [1\n", "line 3", "malformed YAML"),
    ])
    def test_diagnostics_carry_line_numbers(self, text, line, needle):
        with pytest.raises(ConfigError) as err:
            parse_config(text)
        assert needle in str(err.value)
        assert str(err.value).startswith(line)

    def test_load_prefixes_path(self, tmp_path):
        p = tmp_path / "bad.yaml"
        p.write_text(MINIMAL + "latent:\n  sigma0: 0\n")
        with pytest.raises(ConfigError, match=r"bad.yaml: line 4: latent.sigma0"):
            load_config(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "none.yaml")

    def test_relative_mnist_paths_resolve_against_config_dir(self, tmp_path):
        (tmp_path / "img").write_bytes(b"")
        (tmp_path / "lab").write_bytes(b"")
        p = tmp_path / "c.yaml"
        p.write_text(MINIMAL + "data:\n  kind: mnist\n  images: img\n  labels: lab\n")
        assert load_config(p).data.images == str(tmp_path / "img")


@pytest.mark.parametrize("name", ["toy_bimodal.yaml", "toy_unimodal.yaml", "sigma_collapse.yaml"])
def test_shipped_configs_load(name):
    assert isinstance(load_config(CONFIG_DIR / name), ExperimentConfig)


def test_substreams_are_distinct_and_reproducible():
    a = substream(0, "latent").random(4)
    assert np.array_equal(a, substream(0, "latent").random(4))
    assert not np.array_equal(a, substream(0, "init").random(4))
    assert not np.array_equal(a, substream(1, "latent").random(4))
