import numpy as np
import pytest
import torch

from emo_mllm.config import make_config


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def cfg():
    return make_config()


@pytest.fixture
def small_cfg():
    """Narrow model for fast end-to-end tests."""
    return make_config({"d_model": 32, "n_queries": 8, "d_llm": 32, "qformer_blocks": 1,
                        "encoder_layers": 1, "lm_layers": 1, "n_scenes": 4})


ACCEPTANCE: dict[int, tuple[str, bool, float, float, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        name, ok, elapsed, limit, detail = ACCEPTANCE[n]
        line = f"criterion {n} {'PASS' if ok else 'FAIL'}: {name} ({elapsed:.1f}s, limit {limit:.0f}s)"
        terminalreporter.write_line(line + (f" - {detail}" if detail else ""))
