import numpy as np
import pytest

from dogclr import kernels
from oracles import brute_force_replacement

BACKENDS = [kernels.python] + ([kernels.compiled] if kernels.compiled is not None else [])


def unit_rows(a):
    return a / np.linalg.norm(a, axis=1, keepdims=True)


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
@pytest.mark.parametrize("m", [4, 16, 64])
def test_scan_matches_brute_force(impl, m):
    r = np.random.default_rng(m)
    for _ in range(30):
        entries = unit_rows(r.normal(size=(m, 5)))
        probe = unit_rows(r.normal(size=(1, 5)))[0]
        incoming = unit_rows(r.normal(size=(1, 5)))[0]
        idx, payoffs, ties = impl.replacement_scan(entries @ probe, float(incoming @ probe), 1e-12)
        bidx, bpay = brute_force_replacement(entries, incoming, probe)
        assert idx == bidx
        assert np.abs(payoffs - bpay).max() <= 1e-9
        assert ties >= 1


def test_backends_agree_on_sequential_replace():
    if kernels.compiled is None:
        pytest.skip("compiled extension not built")
    r = np.random.default_rng(0)
    bank = unit_rows(r.normal(size=(128, 8)))
    keys = unit_rows(r.normal(size=(16, 8)))
    out = []
    for impl in (kernels.python, kernels.compiled):
        sims = np.ascontiguousarray(keys @ bank.T)
        cross = np.ascontiguousarray(keys @ keys.T)
        out.append((impl.sequential_replace(sims, cross, 5, 1e-12), sims))
    (a, sa), (b, sb) = out
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)
    assert np.array_equal(a[0], b[0])
    np.testing.assert_allclose(sa, sb, atol=0)


def test_sequential_updates_replaced_columns():
    r = np.random.default_rng(1)
    bank = unit_rows(r.normal(size=(6, 3)))
    keys = unit_rows(r.normal(size=(3, 3)))
    sims = np.ascontiguousarray(keys @ bank.T)
    idx, *_ = kernels.sequential_replace(sims, np.ascontiguousarray(keys @ keys.T), 0, 1e-12)
    new_bank = bank.copy()
    for c, i in enumerate(idx):
        new_bank[i] = keys[c]
    np.testing.assert_allclose(sims, keys @ new_bank.T, atol=1e-15)


def test_backend_name():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("impl", BACKENDS, ids=lambda m: m.__name__.rsplit(".", 1)[-1])
def test_empty_scan(impl):
    with pytest.raises(ValueError):
        impl.replacement_scan(np.zeros(0), 0.0, 1e-12)
