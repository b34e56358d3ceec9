import numpy as np
import pytest

from intelliz.corpus import make_corpus
from intelliz.data import prepare_corpus
from intelliz.dsp import AudioBuffer, DspConfig

SR = 24000


def sine(freq, seconds=1.0, amp=0.5, sr=SR, phase=0.0):
    t = np.arange(int(seconds * sr)) / sr
    return AudioBuffer(amp * np.sin(2 * np.pi * freq * t + phase), sr)


def interior(T, cfg=DspConfig()):
    """Frame indices whose analysis window lies fully inside the signal."""
    half = cfg.window_size // 2
    t = np.arange(T)
    n = (T - 1) * cfg.hop_size
    return t[(t * cfg.hop_size - half >= 0) & (t * cfg.hop_size + half <= n)]


@pytest.fixture(scope="session")
def corpus():
    return make_corpus(4, 8, 7)


@pytest.fixture(scope="session")
def prepared(corpus):
    return prepare_corpus(corpus)


@pytest.fixture(scope="session")
def small_corpus():
    return make_corpus(2, 3, 11)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE: dict = {}


def record(criterion: int, ok: bool, detail: str):
    ACCEPTANCE[criterion] = (ok, detail)
    print(f"acceptance {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
