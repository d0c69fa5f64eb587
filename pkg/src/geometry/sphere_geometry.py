"""
Sphere Geometry for AHGCN
Viewport positions on the sphere, great-circle distances, and gnomonic
rendering of viewports from equirectangular images.
"""

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.errors import GeometryError

logger = logging.getLogger(__name__)

HALF_PI = math.pi / 2.0
TWO_PI = 2.0 * math.pi
GOLDEN_RATIO = (1.0 + math.sqrt(5.0)) / 2.0
DEFAULT_VIEWPORT_COUNT = 20


@dataclass(frozen=True)
class SphereCoord:
    """A direction on the unit sphere (radians).

    Longitude is wrapped into [-pi, pi) on construction; latitude must lie in
    [-pi/2, pi/2] (overshoot below 1e-12 is clamped).
    """
    lon: float
    lat: float

    def __post_init__(self):
        lon = float(self.lon)
        lat = float(self.lat)
        if not (math.isfinite(lon) and math.isfinite(lat)):
            raise GeometryError(f"Non-finite sphere coordinate: lon={lon}, lat={lat}")
        if abs(lat) > HALF_PI + 1e-12:
            raise GeometryError(f"Latitude {lat} outside [-pi/2, pi/2]")
        lat = min(max(lat, -HALF_PI), HALF_PI)
        lon = (lon + math.pi) % TWO_PI - math.pi
        # float modulo can land exactly on +pi for inputs just below -pi
        if lon >= math.pi:
            lon -= TWO_PI
        object.__setattr__(self, 'lon', lon)
        object.__setattr__(self, 'lat', lat)

    @classmethod
    def from_degrees(cls, lon_deg: float, lat_deg: float) -> 'SphereCoord':
        return cls(math.radians(lon_deg), math.radians(lat_deg))

    @classmethod
    def from_vector(cls, xyz: Sequence[float]) -> 'SphereCoord':
        x, y, z = (float(v) for v in xyz)
        norm = math.sqrt(x * x + y * y + z * z)
        if norm == 0.0:
            raise GeometryError("Cannot convert the zero vector to a sphere coordinate")
        return cls(math.atan2(y, x), math.asin(max(-1.0, min(1.0, z / norm))))

    def to_vector(self) -> np.ndarray:
        """Unit vector with z pointing to the north pole and x through (0, 0)."""
        cos_lat = math.cos(self.lat)
        return np.array([cos_lat * math.cos(self.lon),
                         cos_lat * math.sin(self.lon),
                         math.sin(self.lat)])

    def to_degrees(self) -> Tuple[float, float]:
        return math.degrees(self.lon), math.degrees(self.lat)


@dataclass(frozen=True)
class ViewportSpec:
    """Where a viewport sits and how it is rendered."""
    center: SphereCoord
    fov: float = 90.0
    resolution: int = 256

    def __post_init__(self):
        if not (0.0 < self.fov < 180.0):
            raise GeometryError(f"Viewport fov must be in (0, 180) degrees, got {self.fov}")
        if int(self.resolution) != self.resolution or self.resolution < 2:
            raise GeometryError(f"Viewport resolution must be an integer >= 2, got {self.resolution}")


@dataclass
class EquirectImage:
    """Equirectangular RGB image, intensities in [0, 1], shape (height, width, 3)."""
    pixels: np.ndarray = field(repr=False)

    def __post_init__(self):
        pixels = np.asarray(self.pixels, dtype=np.float64)
        if pixels.ndim != 3 or pixels.shape[2] != 3:
            raise GeometryError(f"Expected an (H, W, 3) image, got shape {pixels.shape}")
        height, width = pixels.shape[:2]
        if height < 2 or width < 2:
            raise GeometryError(f"Degenerate image dimensions {width}x{height}")
        if width != 2 * height:
            raise GeometryError(
                f"Equirectangular image must have a 2:1 aspect ratio, got {width}x{height}")
        if not np.all(np.isfinite(pixels)) or pixels.min() < 0.0 or pixels.max() > 1.0:
            raise GeometryError("Image intensities must be finite and within [0, 1]")
        self.pixels = pixels

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]


def angular_distance(a: SphereCoord, b: SphereCoord) -> float:
    """Central angle between two sphere points, in [0, pi]."""
    dot = (math.sin(a.lat) * math.sin(b.lat)
           + math.cos(a.lat) * math.cos(b.lat) * math.cos(a.lon - b.lon))
    return math.acos(max(-1.0, min(1.0, dot)))


def pairwise_angular_distances(centers: Sequence[SphereCoord]) -> np.ndarray:
    """Symmetric N x N matrix of angular_distance values."""
    lon = np.array([c.lon for c in centers])
    lat = np.array([c.lat for c in centers])
    dot = (np.sin(lat)[:, None] * np.sin(lat)[None, :]
           + np.cos(lat)[:, None] * np.cos(lat)[None, :] * np.cos(lon[:, None] - lon[None, :]))
    dist = np.arccos(np.clip(dot, -1.0, 1.0))
    np.fill_diagonal(dist, 0.0)
    return dist


def icosahedron_face_centers() -> List[SphereCoord]:
    """The 20 face-center directions of a regular icosahedron.

    Ordered by latitude descending, then longitude ascending.
    """
    phi = GOLDEN_RATIO
    vertices = []
    for s1 in (-1.0, 1.0):
        for s2 in (-1.0, 1.0):
            vertices.append((0.0, s1, s2 * phi))
            vertices.append((s1, s2 * phi, 0.0))
            vertices.append((s2 * phi, 0.0, s1))
    vertices = np.array(vertices)

    # edge length is 2 for this vertex set
    centers = []
    for i, j, k in itertools.combinations(range(len(vertices)), 3):
        a, b, c = vertices[i], vertices[j], vertices[k]
        if all(abs(np.linalg.norm(p - q) - 2.0) < 1e-9 for p, q in ((a, b), (b, c), (a, c))):
            centers.append(SphereCoord.from_vector(a + b + c))

    if len(centers) != DEFAULT_VIEWPORT_COUNT:
        raise GeometryError(f"Icosahedron construction produced {len(centers)} faces")

    centers.sort(key=lambda c: (-round(c.lat, 9), round(c.lon, 9)))
    return centers


def default_viewport_centers(n: int = DEFAULT_VIEWPORT_COUNT,
                             centers_deg: Optional[Sequence[Sequence[float]]] = None
                             ) -> List[SphereCoord]:
    """
    Viewport centers for sampling.

    Args:
        n: Number of viewports
        centers_deg: Optional explicit list of (lon_deg, lat_deg) pairs

    Returns:
        List of SphereCoord
    """
    if centers_deg is not None:
        if len(centers_deg) != n:
            raise GeometryError(
                f"Explicit center list has {len(centers_deg)} entries, expected {n}")
        return [SphereCoord.from_degrees(lon, lat) for lon, lat in centers_deg]

    if n != DEFAULT_VIEWPORT_COUNT:
        raise GeometryError(
            f"Default viewport scheme supports exactly {DEFAULT_VIEWPORT_COUNT} viewports, "
            f"got n={n}; supply an explicit center list")

    return icosahedron_face_centers()


def viewport_directions(spec: ViewportSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Longitude/latitude of every output pixel's ray under the gnomonic projection.

    Returns:
        (lon, lat) arrays of shape (resolution, resolution); row 0 is the top
    """
    size = int(spec.resolution)
    half_extent = math.tan(math.radians(spec.fov) / 2.0)
    steps = ((np.arange(size) + 0.5) / size * 2.0 - 1.0) * half_extent
    x = steps[None, :]
    y = -steps[:, None]

    lon0, lat0 = spec.center.lon, spec.center.lat
    forward = spec.center.to_vector()
    east = np.array([-math.sin(lon0), math.cos(lon0), 0.0])
    north = np.array([-math.sin(lat0) * math.cos(lon0),
                      -math.sin(lat0) * math.sin(lon0),
                      math.cos(lat0)])

    rays = (forward[None, None, :]
            + x[..., None] * east[None, None, :]
            + y[..., None] * north[None, None, :])
    lon = np.arctan2(rays[..., 1], rays[..., 0])
    lat = np.arctan2(rays[..., 2], np.hypot(rays[..., 0], rays[..., 1]))
    return lon, lat


def sample_equirect(img: EquirectImage, lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    """Bilinear lookup with horizontal wrap-around and vertical clamping."""
    height, width = img.height, img.width
    u = (lon + math.pi) / TWO_PI * width - 0.5
    v = np.clip((HALF_PI - lat) / math.pi * height - 0.5, 0.0, height - 1.0)

    j0 = np.floor(u)
    fu = (u - j0)[..., None]
    j0 = j0.astype(np.int64) % width
    j1 = (j0 + 1) % width

    i0 = np.floor(v).astype(np.int64)
    fv = (v - i0)[..., None]
    i1 = np.minimum(i0 + 1, height - 1)

    px = img.pixels
    top = (1.0 - fu) * px[i0, j0] + fu * px[i0, j1]
    bottom = (1.0 - fu) * px[i1, j0] + fu * px[i1, j1]
    out = (1.0 - fv) * top + fv * bottom
    return np.clip(out, 0.0, 1.0)


def render_viewport(img: EquirectImage, spec: ViewportSpec) -> np.ndarray:
    """
    Render a rectilinear viewport from an equirectangular image.

    Args:
        img: Source image
        spec: Viewport placement and size

    Returns:
        Array of shape (resolution, resolution, 3) with values in [0, 1]
    """
    if img.width < 2 or img.height < 2:
        raise GeometryError(f"Degenerate image dimensions {img.width}x{img.height}")
    lon, lat = viewport_directions(spec)
    return sample_equirect(img, lon, lat)
