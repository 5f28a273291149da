import pytest

from searth.data import SynthConfig, generate_dataset
from searth.model import ModelConfig


def tiny_model(**kw) -> ModelConfig:
    base = dict(n_channels=2, n_lat=8, n_lon=16, embed_dim=8, window=(2, 2), heads=(2, 2, 2),
                encoder_blocks=2, core_blocks=2, decoder_blocks=2, precision="float64")
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset():
    return generate_dataset(SynthConfig(n_lat=8, n_lon=16, channels=2, steps=60, seed=5))


@pytest.fixture
def tiny_cfg():
    return tiny_model()


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(ok), detail)
    print(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
