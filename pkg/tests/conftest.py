import pytest

import genqr
from genqr.cli import cmd_index
from genqr.config import config_from_dict

TOY = genqr.data_path("toy")


def toy_config_dict(method="raw", tag="run", work=".", **extra):
    cfg = {
        "corpus": str(TOY / "corpus.jsonl"),
        "topics": str(TOY / "topics.tsv"),
        "qrels": str(TOY / "qrels.txt"),
        "index_dir": f"{work}/idx",
        "output_dir": f"{work}/runs",
        "cache_dir": f"{work}/cache",
        "method": method,
        "run_tag": tag,
        "backend": {"kind": "stub", "vocab": str(TOY / "thesaurus.json"),
                    "seed": 42, "n_terms": 4},
    }
    cfg.update(extra)
    return cfg


@pytest.fixture
def toy_cfg(tmp_path):
    """Factory for toy-benchmark experiment configs rooted in tmp_path."""

    def make(method="raw", tag=None, **extra):
        return config_from_dict(
            toy_config_dict(method, tag or method, work=str(tmp_path), **extra))

    return make


@pytest.fixture
def toy_index(toy_cfg):
    cfg = toy_cfg("raw")
    return cmd_index(cfg)
