"""sRGB <-> CIE LAB conversion and the [-1, 1] working-space mapping.

All conversions assume the sRGB/D65 convention and run in float64.
The working space used by the networks maps LAB channels affinely into
[-1, 1]: L via L/50 - 1, a/b via 2*(x+128)/255 - 1.
"""
import numpy as np

# D65 reference white
_WHITE = np.array([0.95047, 1.0, 1.08883])

_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ2RGB = np.linalg.inv(_RGB2XYZ)

_DELTA = 6.0 / 29.0


def rgb_to_lab(img):
    """Convert an 8-bit RGB image (H, W, 3) to CIE LAB float64."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) RGB image, got shape {img.shape}")
    srgb = img.astype(np.float64) / 255.0
    lin = np.where(srgb <= 0.04045, srgb / 12.92, ((srgb + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T
    t = xyz / _WHITE
    f = np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)
    lab = np.empty_like(xyz)
    lab[..., 0] = 116.0 * f[..., 1] - 16.0
    lab[..., 1] = 500.0 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200.0 * (f[..., 1] - f[..., 2])
    return lab


def lab_to_rgb(lab):
    """Convert a LAB image back to 8-bit RGB, clipping to [0, 255]."""
    lab = np.asarray(lab, dtype=np.float64)
    if lab.ndim != 3 or lab.shape[-1] != 3:
        raise ValueError(f"expected (H, W, 3) LAB image, got shape {lab.shape}")
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    f = np.stack([fx, fy, fz], axis=-1)
    t = np.where(f > _DELTA, f**3, 3 * _DELTA**2 * (f - 4.0 / 29.0))
    xyz = t * _WHITE
    lin = xyz @ _XYZ2RGB.T
    lin = np.clip(lin, 0.0, None)
    srgb = np.where(lin <= 0.0031308, 12.92 * lin, 1.055 * lin ** (1 / 2.4) - 0.055)
    return np.clip(np.rint(srgb * 255.0), 0, 255).astype(np.uint8)


def lab_to_norm(lab):
    """Map LAB channels into the [-1, 1] network working space."""
    lab = np.asarray(lab, dtype=np.float64)
    out = np.empty_like(lab)
    out[..., 0] = lab[..., 0] / 50.0 - 1.0
    out[..., 1:] = 2.0 * (lab[..., 1:] + 128.0) / 255.0 - 1.0
    return out


def norm_to_lab(norm):
    """Inverse of :func:`lab_to_norm`."""
    norm = np.asarray(norm, dtype=np.float64)
    out = np.empty_like(norm)
    out[..., 0] = (norm[..., 0] + 1.0) * 50.0
    out[..., 1:] = (norm[..., 1:] + 1.0) * 255.0 / 2.0 - 128.0
    return out


def rgb_to_norm(img):
    """8-bit RGB straight into the [-1, 1] working space."""
    return lab_to_norm(rgb_to_lab(img))


def norm_to_rgb(norm):
    """Working space back to 8-bit RGB (clipped)."""
    return lab_to_rgb(norm_to_lab(np.clip(norm, -1.0, 1.0)))
