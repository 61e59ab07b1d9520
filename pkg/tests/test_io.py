import nibabel as nib
import numpy as np
import pytest

from slicesr.io import VolumeFormatError, load_volume, save_volume
from slicesr.volume import Volume


def sample_volume(spacing=(0.9, 0.9, 6.5)):
    data = np.random.default_rng(0).random((6, 5, 4)).astype(np.float32)
    return Volume(data.astype(np.float64), spacing, through_axis=2)


@pytest.mark.parametrize("suffix", [".nii", ".nii.gz"])
def test_round_trip(tmp_path, suffix):
    vol = sample_volume((0.9, 0.9, 6.5))
    save_volume(vol, tmp_path / f"v{suffix}")
    back = load_volume(tmp_path / f"v{suffix}", normalize=False)
    np.testing.assert_array_equal(back.data, vol.data)
    assert back.spacing == (0.9, 0.9, 6.5)
    assert back.through_axis == 2
    np.testing.assert_allclose(back.affine, vol.affine, rtol=1e-6)


def test_spacing_exact_beyond_float32(tmp_path):
    spacing = (1 / 3, 0.1, 4.4)
    save_volume(sample_volume(spacing), tmp_path / "v.nii.gz")
    assert load_volume(tmp_path / "v.nii.gz").spacing == spacing


def test_normalization_round_trip(tmp_path):
    vol = sample_volume()
    vol = vol.replace(data=vol.data * 300.0)
    save_volume(vol, tmp_path / "a.nii.gz")
    loaded = load_volume(tmp_path / "a.nii.gz")
    assert loaded.intensity_scale == pytest.approx(np.percentile(vol.data, 99.9))
    assert np.percentile(loaded.data, 99.9) == pytest.approx(1.0)
    save_volume(loaded, tmp_path / "b.nii.gz")
    np.testing.assert_allclose(load_volume(tmp_path / "b.nii.gz", normalize=False).data,
                               vol.data.astype(np.float32), rtol=1e-6)


def test_isotropic_has_no_axis(tmp_path):
    save_volume(sample_volume((1.0, 1.0, 1.0)), tmp_path / "iso.nii")
    assert load_volume(tmp_path / "iso.nii").through_axis is None
    assert load_volume(tmp_path / "iso.nii", through_axis=1).through_axis == 1


def test_missing_spacing(tmp_path):
    img = nib.Nifti1Image(np.zeros((4, 4, 4), np.float32), np.eye(4))
    img.header["pixdim"][1:4] = 0.0
    nib.save(img, tmp_path / "bad.nii")
    with pytest.raises(VolumeFormatError, match="spacing"):
        load_volume(tmp_path / "bad.nii")


def test_unsupported_container(tmp_path):
    (tmp_path / "v.mha").write_bytes(b"")
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "v.mha")
    with pytest.raises(VolumeFormatError):
        save_volume(sample_volume(), tmp_path / "v.npy")


def test_not_3d(tmp_path):
    nib.save(nib.Nifti1Image(np.zeros((4, 4), np.float32), np.eye(4)), tmp_path / "2d.nii")
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "2d.nii")


def test_gzip_output_is_deterministic(tmp_path):
    vol = sample_volume()
    save_volume(vol, tmp_path / "a.nii.gz")
    save_volume(vol, tmp_path / "b.nii.gz")
    assert (tmp_path / "a.nii.gz").read_bytes() == (tmp_path / "b.nii.gz").read_bytes()
