import numpy as np
import pytest
import torch
from hypothesis import settings

from sewfield.corpus import generate_corpus
from sewfield.nn import DTYPE, NetworkConfig
from sewfield.pattern import Panel

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_corpus(7, 24)


@pytest.fixture(scope="session")
def corpus_panels(small_corpus):
    return [q for p in small_corpus for q in p.panels]


def square_panel(half=0.5, scale=1.0):
    h = half
    return Panel.from_vertices([[-h, -h], [h, -h], [h, h], [-h, h]], scale)


def rect_field(x, theta):
    """Rectangle centred at (theta[0], theta[1]) with half sizes (theta[2], theta[3]).

    Channel 0 is the exact signed distance, channel 1 the distance to the
    nearest corner.
    """
    c = theta[..., 0:2]
    h = theta[..., 2:4]
    if theta.dim() > 1:
        c, h = c[..., None, :], h[..., None, :]
    q = (x - c).abs() - h
    outside = q.clamp_min(0).norm(dim=-1)
    inside = q.max(dim=-1).values.clamp_max(0)
    d_c = outside + inside
    signs = torch.tensor([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=x.dtype)
    corners = c[..., None, :] + signs * h[..., None, :]
    d_p = (x[..., None, :] - corners).norm(dim=-1).min(dim=-1).values
    return torch.stack([d_c, d_p], dim=-1)


def disk_field(x, theta):
    """Disk centred at theta[:2] with radius theta[2]; endpoint channel: two points on the rim."""
    c, r = theta[0:2], theta[2]
    d_c = (x - c).norm(dim=-1) - r
    ends = torch.stack([c + torch.stack([r, r * 0]), c - torch.stack([r, r * 0])])
    d_p = (x[..., None, :] - ends).norm(dim=-1).min(dim=-1).values
    return torch.stack([d_c, d_p], dim=-1)


class _NoParams(torch.nn.Module):
    pass


class AnalyticVAE:
    """Stand-in for the panel VAE whose "latent" is a rectangle (cx, cy, a, b)."""

    def __init__(self):
        self.cfg = NetworkConfig(latent_dim=4)
        self.decoder_ = _NoParams()

    def transform(self, panels, seed=0):
        out = []
        for p in panels:
            pts = p.polyline
            lo, hi = pts.min(0), pts.max(0)
            out.append(np.r_[(lo + hi) / 2, (hi - lo) / 2])
        return np.array(out)

    def field(self, x, z):
        return rect_field(x, torch.as_tensor(z, dtype=DTYPE))

    def decode(self, x, z):
        with torch.no_grad():
            return self.field(torch.as_tensor(np.asarray(x), dtype=DTYPE), z).numpy()


@pytest.fixture
def analytic_vae():
    return AnalyticVAE()


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[number] = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(ACCEPTANCE[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
