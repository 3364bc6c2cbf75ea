import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dualconv import kernels
from dualconv.errors import FormatError, GeometryError, ShapeError, SpecError
from dualconv.kernels import ConvKind, ConvSpec, FilterBank, MacCounter, reference_direct
from dualconv.tensor import max_abs_diff, seeded_random

STD, GRP, DUAL, HET, DSC = (ConvKind.STANDARD, ConvKind.GROUP, ConvKind.DUAL, ConvKind.HET,
                            ConvKind.DEPTHWISE_SEPARABLE)


def bank_of(spec, seed=1, precision=64):
    return kernels.init_filters(spec, seed, precision)


# -- ConvSpec -------------------------------------------------------------------

def test_spec_divisibility():
    with pytest.raises(SpecError):
        ConvSpec(GRP, 6, 8, 3, groups=4)
    with pytest.raises(SpecError):
        ConvSpec(DUAL, 8, 6, 3, groups=4)
    with pytest.raises(SpecError):
        ConvSpec(HET, 6, 4, 3, parts=4)
    with pytest.raises(SpecError):
        ConvSpec(DUAL, 8, 8, 3)


def test_spec_shapes():
    assert ConvSpec(DUAL, 8, 16, 3, groups=4).spatial_shape == (16, 2, 3, 3)
    assert ConvSpec(DUAL, 8, 16, 3, groups=4).pointwise_shape == (16, 8)
    assert ConvSpec(HET, 8, 4, 3, parts=4).pointwise_shape == (4, 6)
    assert ConvSpec(DSC, 4, 6, 3).spatial_shape == (4, 1, 3, 3)
    assert ConvSpec(STD, 3, 4, 3).pointwise_shape is None


def test_kind_parsing_and_tags():
    assert ConvKind.parse("standard") is STD
    assert ConvKind.parse("hc") is HET
    for k in ConvKind:
        assert ConvKind.from_tag(k.tag) is k
    with pytest.raises(FormatError):
        ConvKind.from_tag(99)


def test_filterbank_validation():
    spec = ConvSpec(DUAL, 4, 4, 3, 1, 1, 2)
    good = bank_of(spec)
    with pytest.raises(SpecError):
        kernels.forward(seeded_random((1, 4, 5, 5), 0, 64), FilterBank(good.spatial), spec)
    with pytest.raises(ShapeError):
        kernels.forward(seeded_random((1, 3, 5, 5), 0, 64), good, spec)


def test_geometry_error():
    spec = ConvSpec(STD, 1, 1, 5)
    with pytest.raises(GeometryError):
        kernels.forward(seeded_random((1, 1, 3, 3), 0, 64), bank_of(spec), spec)


# -- standard -------------------------------------------------------------------

def test_standard_scalar():
    spec = ConvSpec(STD, 1, 1, 1)
    x = np.full((1, 1, 1, 1), 3.0)
    w = FilterBank(np.full((1, 1, 1, 1), -2.0))
    assert kernels.forward_standard(x, w, spec).item() == -6.0


def test_standard_impulse_mirrors_kernel():
    spec = ConvSpec(STD, 1, 1, 3, 1, 1)
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0
    w = bank_of(spec)
    out = kernels.forward_standard(x, w, spec)[0, 0]
    np.testing.assert_array_equal(out[1:4, 1:4], w.spatial[0, 0, ::-1, ::-1])
    assert not out[0].any() and not out[4].any()


def test_standard_random_vs_oracle():
    spec = ConvSpec(STD, 4, 6, 3, 2, 1)
    x = seeded_random((2, 4, 8, 8), 3, 32)
    w = bank_of(spec, 4, 32)
    assert max_abs_diff(kernels.forward_standard(x, w, spec), reference_direct(x, w, spec)) <= 1e-5


# -- group ----------------------------------------------------------------------

def test_group_one_equals_standard():
    spec = ConvSpec(GRP, 4, 6, 3, 1, 1, 1)
    x, w = seeded_random((1, 4, 6, 6), 0, 64), bank_of(spec)
    assert np.array_equal(kernels.forward_group(x, w, spec),
                          kernels.forward_standard(x, w, ConvSpec(STD, 4, 6, 3, 1, 1)))


def test_group_diagonal():
    spec = ConvSpec(GRP, 3, 3, 1, groups=3)
    x = seeded_random((2, 3, 4, 4), 0, 64)
    w = bank_of(spec)
    out = kernels.forward_group(x, w, spec)
    np.testing.assert_allclose(out, x * w.spatial.reshape(1, 3, 1, 1), rtol=0, atol=1e-15)


def test_group_random_vs_oracle():
    spec = ConvSpec(GRP, 8, 8, 3, 1, 1, 4)
    x, w = seeded_random((2, 8, 7, 7), 1, 32), bank_of(spec, 2, 32)
    assert max_abs_diff(kernels.forward_group(x, w, spec), reference_direct(x, w, spec)) <= 1e-5


# -- pointwise ------------------------------------------------------------------

def test_pointwise_identity():
    x = seeded_random((2, 5, 4, 4), 0, 64)
    assert np.array_equal(kernels.forward_pointwise(x, np.eye(5)), x)


def test_pointwise_constant_planes():
    x = np.stack([np.full((3, 3), 3.0), np.full((3, 3), 5.0)])[None]
    out = kernels.forward_pointwise(x, np.array([[1.0, 1.0]]))
    assert out.shape == (1, 1, 3, 3) and np.all(out == 8.0)


def test_pointwise_strided_samples_grid():
    x = seeded_random((1, 2, 5, 5), 0, 64)
    w = np.array([[1.0, 0.0]])
    out = kernels.forward_pointwise(x, w, stride=2)
    np.testing.assert_array_equal(out[0, 0], x[0, 0, ::2, ::2])


# -- dual -----------------------------------------------------------------------

def test_dual_zero_pointwise_is_group():
    spec = ConvSpec(DUAL, 8, 8, 3, 1, 1, 2)
    w = bank_of(spec)
    x = seeded_random((1, 8, 6, 6), 0, 64)
    zeroed = FilterBank(w.spatial, np.zeros_like(w.pointwise))
    assert np.array_equal(kernels.forward_dual(x, zeroed, spec), kernels.forward_group(x, w, spec))


def test_dual_zero_spatial_is_pointwise():
    spec = ConvSpec(DUAL, 8, 8, 3, 1, 1, 2)
    w = bank_of(spec)
    x = seeded_random((1, 8, 6, 6), 0, 64)
    zeroed = FilterBank(np.zeros_like(w.spatial), w.pointwise)
    np.testing.assert_array_equal(kernels.forward_dual(x, zeroed, spec), kernels.forward_pointwise(x, w.pointwise))


def test_dual_random_decomposes():
    spec = ConvSpec(DUAL, 8, 8, 3, 1, 1, 2)
    x, w = seeded_random((2, 8, 6, 6), 4, 32), bank_of(spec, 5, 32)
    out = kernels.forward_dual(x, w, spec)
    assert np.array_equal(out, kernels.forward_group(x, w, spec) + kernels.forward_pointwise(x, w.pointwise))
    assert max_abs_diff(out, reference_direct(x, w, spec)) <= 1e-5


def test_dual_pointwise_centre_alignment():
    # with K=3, p=0 the 1x1 branch reads the centre of each 3x3 window
    spec = ConvSpec(DUAL, 2, 2, 3, 1, 0, 2)
    x = seeded_random((1, 2, 5, 5), 0, 64)
    w = FilterBank(np.zeros(spec.spatial_shape), np.eye(2))
    np.testing.assert_array_equal(kernels.forward_dual(x, w, spec), x[:, :, 1:4, 1:4])


# -- het ------------------------------------------------------------------------

def test_het_p1_is_standard():
    spec = ConvSpec(HET, 4, 5, 3, 1, 1, None, 1)
    w = bank_of(spec)
    x = seeded_random((1, 4, 6, 6), 0, 64)
    std = kernels.forward_standard(x, FilterBank(w.spatial), ConvSpec(STD, 4, 5, 3, 1, 1))
    assert np.array_equal(kernels.forward_het(x, w, spec), std)


def test_het_pm_pure_pointwise():
    spec = ConvSpec(HET, 4, 4, 3, 1, 1, None, 4)
    w = bank_of(spec)
    w = FilterBank(np.zeros_like(w.spatial), w.pointwise)
    x = seeded_random((1, 4, 5, 5), 1, 64)
    out = kernels.forward_het(x, w, spec)
    dense = np.zeros((4, 4))
    for n in range(4):
        dense[n, [c for c in range(4) if c != n]] = w.pointwise[n]
    np.testing.assert_allclose(out, kernels.forward_pointwise(x, dense), rtol=0, atol=1e-15)
    assert max_abs_diff(out, reference_direct(x, w, spec)) <= 1e-12


def test_het_random_vs_oracle():
    spec = ConvSpec(HET, 8, 4, 3, 1, 1, None, 4)
    x, w = seeded_random((2, 8, 6, 6), 2, 32), bank_of(spec, 3, 32)
    assert max_abs_diff(kernels.forward_het(x, w, spec), reference_direct(x, w, spec)) <= 1e-5


def test_het_fewer_filters_than_parts():
    spec = ConvSpec(HET, 8, 2, 3, 1, 1, None, 4)
    x, w = seeded_random((1, 8, 5, 5), 2, 64), bank_of(spec, 3)
    assert max_abs_diff(kernels.forward_het(x, w, spec), reference_direct(x, w, spec)) <= 1e-12


def test_het_channels_rule():
    ks, ps = kernels.het_channels(8, 4, 5)
    assert ks.tolist() == [1, 5] and ps.tolist() == [0, 2, 3, 4, 6, 7]


# -- depthwise separable --------------------------------------------------------

def test_dsc_unit_depthwise_is_pointwise():
    spec = ConvSpec(DSC, 3, 5, 1)
    w = bank_of(spec)
    w = FilterBank(np.ones_like(w.spatial), w.pointwise)
    x = seeded_random((1, 3, 4, 4), 0, 64)
    np.testing.assert_array_equal(kernels.forward_depthwise_separable(x, w, spec),
                                  kernels.forward_pointwise(x, w.pointwise))


def test_dsc_single_channel_sequential():
    spec = ConvSpec(DSC, 1, 1, 3, 1, 1)
    w = bank_of(spec)
    x = seeded_random((1, 1, 5, 5), 0, 64)
    stage1 = kernels.forward_standard(x, FilterBank(w.spatial), ConvSpec(STD, 1, 1, 3, 1, 1))
    np.testing.assert_allclose(kernels.forward_depthwise_separable(x, w, spec),
                               stage1 * w.pointwise[0, 0], rtol=0, atol=1e-15)
    assert max_abs_diff(kernels.forward_depthwise_separable(x, w, spec), reference_direct(x, w, spec)) <= 1e-12


def test_dsc_random_vs_oracle():
    spec = ConvSpec(DSC, 4, 6, 3, 1, 1)
    x, w = seeded_random((2, 4, 6, 6), 1, 32), bank_of(spec, 2, 32)
    assert max_abs_diff(kernels.forward_depthwise_separable(x, w, spec), reference_direct(x, w, spec)) <= 1e-5


# -- oracle ---------------------------------------------------------------------

SPECS = [ConvSpec(STD, 4, 6, 3, 1, 1), ConvSpec(GRP, 4, 6, 3, 2, 1, 2), ConvSpec(DUAL, 4, 6, 3, 1, 1, 2),
         ConvSpec(HET, 4, 6, 3, 1, 1, None, 2), ConvSpec(DSC, 4, 6, 3, 2, 1)]


@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind.value)
def test_zero_weights_zero_output(spec):
    x = seeded_random((1, 4, 6, 6), 0, 64)
    w = kernels.zero_filters(spec, 64)
    assert not reference_direct(x, w, spec).any()
    assert not kernels.forward(x, w, spec).any()


def test_oracle_dual_g1_unfolds():
    spec = ConvSpec(DUAL, 3, 4, 3, 1, 1, 1)
    x, w = seeded_random((1, 3, 5, 5), 0, 64), bank_of(spec)
    std = kernels.forward_standard(x, FilterBank(w.spatial), ConvSpec(STD, 3, 4, 3, 1, 1))
    assert max_abs_diff(reference_direct(x, w, spec), std + kernels.forward_pointwise(x, w.pointwise)) <= 1e-12


def test_mac_counter_standard():
    spec = ConvSpec(STD, 2, 3, 3, 1, 0)
    counter = MacCounter()
    reference_direct(seeded_random((2, 2, 5, 5), 0, 64), bank_of(spec), spec, counter)
    assert counter.macs == 2 * 9 * 3 * 3 * 2 * 3


# -- properties -----------------------------------------------------------------

kinds = st.sampled_from(list(ConvKind))


@st.composite
def spec_and_input(draw):
    kind = draw(kinds)
    g = draw(st.sampled_from([1, 2, 4]))
    m = g * draw(st.integers(1, 3))
    n = g * draw(st.integers(1, 3))
    k = draw(st.sampled_from([1, 3]))
    s = draw(st.integers(1, 2))
    p = draw(st.integers(0, 1))
    groups = g if kind in (GRP, DUAL) else None
    parts = g if kind is HET else None
    h = draw(st.integers(max(1, k - 2 * p), 7))
    return ConvSpec(kind, m, n, k, s, p, groups, parts), (draw(st.integers(1, 2)), m, h, h), draw(st.integers(0, 999))


@given(spec_and_input(), st.floats(-2, 2), st.floats(-2, 2))
def test_forward_linear_in_input(case, a, b):
    spec, shape, seed = case
    x, y = seeded_random(shape, seed, 64), seeded_random(shape, seed + 1, 64)
    w = bank_of(spec, seed)
    lhs = kernels.forward(a * x + b * y, w, spec)
    rhs = a * kernels.forward(x, w, spec) + b * kernels.forward(y, w, spec)
    assert max_abs_diff(lhs, rhs) <= 1e-12


@given(spec_and_input())
def test_fast_path_matches_oracle(case):
    spec, shape, seed = case
    x, w = seeded_random(shape, seed, 64), bank_of(spec, seed)
    assert max_abs_diff(kernels.forward(x, w, spec), reference_direct(x, w, spec)) <= 1e-12


@given(st.sampled_from([2, 4]), st.integers(1, 2), st.integers(0, 999))
def test_group_locality(g, mult, seed):
    m = n = g * mult
    spec = ConvSpec(GRP, m, n, 3, 1, 1, g)
    x, w = seeded_random((1, m, 5, 5), seed, 64), bank_of(spec, seed)
    x2 = x.copy()
    x2[:, m - 1] += 1.0  # a channel of the last group only
    diff = np.abs(kernels.forward(x2, w, spec) - kernels.forward(x, w, spec))
    assert not diff[:, : n - n // g].any()


# -- backward -------------------------------------------------------------------

@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind.value)
def test_backward_zero_upstream(spec):
    x, w = seeded_random((1, 4, 6, 6), 0, 64), bank_of(spec)
    ho, wo = spec.output_hw(6, 6)
    g = kernels.backward(x, w, spec, np.zeros((1, 6, ho, wo)))
    assert not g.d_input.any() and not g.d_spatial.any()
    assert g.d_pointwise is None or not g.d_pointwise.any()


def test_backward_scalar():
    spec = ConvSpec(STD, 1, 1, 1)
    x, w = np.full((1, 1, 1, 1), 3.0), FilterBank(np.full((1, 1, 1, 1), 2.0))
    g = kernels.backward(x, w, spec, np.full((1, 1, 1, 1), 5.0))
    assert g.d_spatial.item() == 15.0 and g.d_input.item() == 10.0


@given(spec_and_input())
def test_backward_is_adjoint_of_forward(case):
    spec, shape, seed = case
    x, w = seeded_random(shape, seed, 64), bank_of(spec, seed)
    y = kernels.forward(x, w, spec)
    r = np.random.default_rng(seed).standard_normal(y.shape)
    g = kernels.backward(x, w, spec, r)
    # forward is linear in x, so <f(x), r> = <x, dL/dx>
    assert abs(float(np.sum(y * r)) - float(np.sum(x * g.d_input))) <= 1e-10 * max(1.0, float(np.abs(y).sum()))


# -- serialisation --------------------------------------------------------------

@pytest.mark.parametrize("spec", SPECS, ids=lambda s: s.kind.value)
@pytest.mark.parametrize("precision", [32, 64])
def test_filters_roundtrip(spec, precision):
    w = kernels.init_filters(spec, 3, precision)
    spec2, w2 = kernels.filters_from_bytes(kernels.filters_to_bytes(spec, w))
    assert spec2 == spec and w2 == w
    buf = io.BytesIO()
    kernels.write_filters(buf, spec, w)
    buf.seek(0)
    assert kernels.read_filters(buf)[1] == w


def test_filters_bad_magic():
    spec = SPECS[2]
    blob = kernels.filters_to_bytes(spec, bank_of(spec))
    with pytest.raises(FormatError):
        kernels.filters_from_bytes(b"NOTMAGIC" + blob[8:])
    with pytest.raises(FormatError):
        kernels.filters_from_bytes(blob[:20])


def test_init_shares_spatial_between_group_and_dual():
    g = kernels.init_filters(ConvSpec(GRP, 4, 4, 3, groups=2), 7)
    d = kernels.init_filters(ConvSpec(DUAL, 4, 4, 3, groups=2), 7)
    assert np.array_equal(g.spatial, d.spatial)
