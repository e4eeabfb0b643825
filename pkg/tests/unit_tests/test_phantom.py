import numpy as np
import pytest
from scipy import ndimage

from panosynth.errors import PhantomError
from panosynth.phantom import PhantomSpec, generate, read_truth, tooth_angles, write_truth
from panosynth.volume import rescale

# Halfway between bone and enamel levels
ENAMEL_CUT = 1250.0


def test_same_spec_and_seed_give_identical_volumes(small_spec) -> None:
    first, _ = generate(small_spec, seed=7)
    second, _ = generate(small_spec, seed=7)
    assert first.raw.tobytes() == second.raw.tobytes()


def test_seed_only_changes_texture() -> None:
    flat = PhantomSpec(dims=(96, 96, 64), arch_axes=(30.0, 32.0), tooth_count=10, texture_hu=0.0, root_jitter=0.0)
    first, _ = generate(flat, seed=1)
    second, _ = generate(flat, seed=2)
    np.testing.assert_array_equal(first.raw, second.raw)


def test_untextured_levels_are_exact() -> None:
    spec = PhantomSpec(
        dims=(96, 96, 64), arch_axes=(30.0, 32.0), tooth_count=10, implant_teeth={4}, texture_hu=0.0
    )
    volume, _ = generate(spec)
    levels = set(np.unique(rescale(volume)).tolist())
    assert levels == {spec.air, spec.soft_tissue, spec.bone, spec.enamel, spec.metal}


def test_untilted_jaw_is_mirror_symmetric() -> None:
    spec = PhantomSpec(dims=(96, 96, 64), arch_axes=(30.0, 32.0), tooth_count=10, texture_hu=0.0, root_jitter=0.0)
    volume, _ = generate(spec)
    jaw = rescale(volume) >= spec.bone
    mirrored = jaw[:, :, ::-1]
    # Mirror plane is the middle of the x axis; allow one voxel of slack
    grown = ndimage.binary_dilation(jaw, structure=np.ones((1, 3, 3), dtype=bool))
    assert np.all(grown[mirrored])


def test_missing_tooth_leaves_fifteen_crowns() -> None:
    spec = PhantomSpec(missing_teeth={3})
    volume, truth = generate(spec, seed=0)
    lo, hi = truth.crown_z
    band = rescale(volume)[lo:hi] >= ENAMEL_CUT
    _, count = ndimage.label(band)
    assert count == 15


def test_implants_are_metal() -> None:
    spec = PhantomSpec(dims=(96, 96, 64), arch_axes=(30.0, 32.0), tooth_count=10, implant_teeth={2, 7})
    volume, truth = generate(spec)
    values = rescale(volume)
    z = (truth.crown_z[0] + truth.crown_z[1]) // 2
    for tooth in truth.teeth:
        x, y = int(round(tooth.x)), int(round(tooth.y))
        if tooth.state == "implant":
            assert values[z, y, x] == spec.metal
        else:
            assert spec.enamel - 600 < values[z, y, x] < spec.metal


def test_truth_records_tooth_states_and_tilt() -> None:
    spec = PhantomSpec(missing_teeth={0, 15}, implant_teeth={8}, tilt_deg=10.0)
    _, truth = generate(spec)
    states = [t.state for t in truth.teeth]
    assert states[0] == states[15] == "missing"
    assert states[8] == "implant"
    assert len(truth.present_teeth) == 14
    assert truth.tilt_deg == 10.0


def test_tilt_rotates_tooth_centres_about_axial_centre() -> None:
    _, straight = generate(PhantomSpec(texture_hu=0.0))
    _, tilted = generate(PhantomSpec(texture_hu=0.0, tilt_deg=10.0))
    theta = np.radians(10.0)
    centre = np.array([63.5, 63.5])
    rotation = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    for a, b in zip(straight.teeth, tilted.teeth):
        expected = centre + rotation @ (np.array([a.x, a.y]) - centre)
        np.testing.assert_allclose([b.x, b.y], expected, atol=1e-9)


def test_tooth_angles_are_symmetric_and_increasing() -> None:
    angles = tooth_angles(42.0, 46.0, 16)
    assert angles[0] == pytest.approx(-80.0)
    assert angles[-1] == pytest.approx(80.0)
    np.testing.assert_array_equal(angles, -angles[::-1])
    assert np.all(np.diff(angles) > 0)
    assert tooth_angles(42.0, 46.0, 1).tolist() == [0.0]


def test_truth_sidecar_round_trip(tmp_path) -> None:
    _, truth = generate(PhantomSpec(missing_teeth={3}, tilt_deg=-7.0), seed=3)
    path = tmp_path / "truth.txt"
    write_truth(truth, path)
    assert "tilt_deg=-7.0\n" in path.read_text()
    assert read_truth(path) == truth


def test_truth_sidecar_ignores_comments(tmp_path) -> None:
    _, truth = generate(PhantomSpec(), seed=5)
    path = tmp_path / "truth.txt"
    write_truth(truth, path)
    path.write_text("# generated phantom\n" + path.read_text())
    assert read_truth(path) == truth


def test_missing_truth_sidecar(tmp_path) -> None:
    with pytest.raises(PhantomError, match="not found"):
        read_truth(tmp_path / "absent.txt")


@pytest.mark.parametrize(
    "overrides, message",
    [
        ({"tooth_count": 0}, "tooth_count"),
        ({"missing_teeth": {16}}, "missing/implant"),
        ({"missing_teeth": {2}, "implant_teeth": {2}}, "both missing"),
        ({"tilt_deg": 45.0}, "tilt_deg"),
        ({"bone": 20.0}, "intensity levels"),
        ({"tooth_count": 40}, "teeth overlap"),
        ({"dims": (64, 64, 96)}, "dims too small"),
        ({"dims": (128, 128, 20)}, "dims too small"),
    ],
)
def test_invalid_specs_are_rejected(overrides, message) -> None:
    with pytest.raises(PhantomError, match=message):
        generate(PhantomSpec(**overrides))
