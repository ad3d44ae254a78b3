import pytest

from artifact.instgen import GroupSpec, generate, preset_overrides
from artifact.model import EffectKind

ACCEPTANCE_LINES: list[str] = []


def small_case(s: int, kind="linear", regime=None):
    """Seeded small market: 2..6 travelers, 2..4 providers.

    Every fifth case uses the default generator ranges, the rest the dense preset
    (most default-range small markets have no profitable trade).
    """
    kind = EffectKind(kind)
    regime = regime or ("default" if s % 5 == 4 else "dense")
    n_trav, n_prov = 2 + s % 5, 2 + s % 3
    spec = GroupSpec.from_name(f"MaaS-{n_trav}-{n_prov}", seed=1000 + s, kind=kind,
                               overrides=preset_overrides(regime, kind))
    return generate(spec)


def record_acceptance(line: str):
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def tmp_out(tmp_path):
    return tmp_path / "out"
