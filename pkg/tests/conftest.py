import pytest

from dodgen.dataset import PromptSource, episodes
from dodgen.hierarchy import Models
from dodgen.mtd import GLOBAL, LOCAL, MTD, DiffusionConfig, UNetConfig
from dodgen.tklvae import TKLVAE, VAEConfig

TINY_SIZE = 16


def tiny_vae(seed=0):
    return TKLVAE(VAEConfig(base_channels=4, hidden_channels=8, latent_channels=4, attn_dim=8, seed=seed))


def tiny_mtd(depth, seed=0, multi_scale=True):
    cfg = DiffusionConfig(
        T=3,
        beta_start=1e-3,
        beta_end=0.3,
        unet=UNetConfig(widths=(8, 8), cond_channels=(4, 4), mask_channels=(1, 2), time_dim=8, attn_dim=8, multi_scale=multi_scale, seed=seed * 10 + depth),
    )
    return MTD(cfg, GLOBAL if depth == 1 else LOCAL, depth)


def tiny_models(m=3, seed=0):
    return Models(tiny_vae(seed), {d: tiny_mtd(d, seed) for d in range(1, m + 1)}, allow_untrained=True, frame_size=TINY_SIZE)


@pytest.fixture(scope="session")
def models3():
    return tiny_models(3)


@pytest.fixture(scope="session")
def prompt_source():
    return PromptSource(episodes([1000], length=400, size=TINY_SIZE)[0])


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("tests.test_acceptance")
    rows = sorted(getattr(mod, "RESULTS", []))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for num, name, ok, detail in rows:
        terminalreporter.write_line(f"criterion {num} {'PASS' if ok else 'FAIL'} [{name}] {detail}")
