//! Synthetic multi-view scenes.
//!
//! A scene is a base texture photographed from several simulated poses. Each
//! view stores the homography that maps base-texture coordinates to its own
//! pixel coordinates, so exact ground-truth correspondences exist between any
//! two views. Pixel convention everywhere: origin at the top-left corner,
//! (x, y) = (column, row), pixel centers on integer coordinates.

use std::fs;
use std::path::Path;

use nalgebra::{Matrix3, SMatrix, SVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;

/// Maps base-texture coordinates to view pixel coordinates (homogeneous).
pub type Homography = Matrix3<f64>;

pub const MIN_HOMOGRAPHY_DET: f64 = 1e-9;
const MIN_SIDE: usize = 8;

#[derive(Debug, Clone)]
pub struct View {
    pub id: u32,
    pub image: Image,
    pub homography: Homography,
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub views: Vec<View>,
    /// Present for synthetic scenes; external scenes may omit it.
    pub base_texture: Option<Image>,
    pub seed: u64,
}

impl Scene {
    /// Validates the scene invariants: at least two views, unique ids, equal
    /// dimensions of at least 8x8, unit-range pixels, invertible homographies.
    pub fn new(views: Vec<View>, base_texture: Option<Image>, seed: u64) -> Result<Scene> {
        if views.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "a scene needs at least 2 views, got {}",
                views.len()
            )));
        }
        let (h, w) = (views[0].image.height(), views[0].image.width());
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::InvalidInput(format!("views must be at least 8x8, got {w}x{h}")));
        }
        let mut ids = std::collections::BTreeSet::new();
        for v in &views {
            if !ids.insert(v.id) {
                return Err(Error::InvalidInput(format!("duplicate view id {}", v.id)));
            }
            if v.image.height() != h || v.image.width() != w {
                return Err(Error::InvalidInput(format!(
                    "view {} is {}x{}, expected {w}x{h}",
                    v.id,
                    v.image.width(),
                    v.image.height()
                )));
            }
            if !v.image.is_unit_range() {
                return Err(Error::InvalidInput(format!("view {} has values outside [0,1]", v.id)));
            }
            if v.homography.determinant().abs() <= MIN_HOMOGRAPHY_DET {
                return Err(Error::DegenerateGeometry(format!(
                    "view {} homography is not invertible",
                    v.id
                )));
            }
        }
        if let Some(tex) = &base_texture {
            if !tex.is_unit_range() {
                return Err(Error::InvalidInput("base texture has values outside [0,1]".into()));
            }
        }
        Ok(Scene { views, base_texture, seed })
    }

    pub fn view(&self, id: u32) -> Result<&View> {
        self.views.iter().find(|v| v.id == id).ok_or(Error::MissingView(id))
    }

    pub fn height(&self) -> usize {
        self.views[0].image.height()
    }

    pub fn width(&self) -> usize {
        self.views[0].image.width()
    }

    pub fn view_ids(&self) -> Vec<u32> {
        self.views.iter().map(|v| v.id).collect()
    }

    /// All unordered view-id pairs (a < b), in scene order.
    pub fn pairs(&self) -> Vec<(u32, u32)> {
        let ids = self.view_ids();
        let mut out = Vec::new();
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                out.push((ids[i].min(ids[j]), ids[i].max(ids[j])));
            }
        }
        out
    }
}

/// Applies a homography to a point; errors if the point maps to infinity.
pub fn warp_point(h: &Homography, p: (f64, f64)) -> Result<(f64, f64)> {
    let q = h * nalgebra::Vector3::new(p.0, p.1, 1.0);
    if q.z.abs() < 1e-12 {
        return Err(Error::PointAtInfinity { scale: q.z.abs() });
    }
    Ok((q.x / q.z, q.y / q.z))
}

/// Direct linear transform from exactly four correspondences, normalized to
/// h33 = 1. Returns None for degenerate configurations.
fn dlt_homography(src: &[(f64, f64); 4], dst: &[(f64, f64); 4]) -> Option<Homography> {
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for (i, (&(x, y), &(u, v))) in src.iter().zip(dst.iter()).enumerate() {
        a[(2 * i, 0)] = x;
        a[(2 * i, 1)] = y;
        a[(2 * i, 2)] = 1.0;
        a[(2 * i, 6)] = -u * x;
        a[(2 * i, 7)] = -u * y;
        b[2 * i] = u;
        a[(2 * i + 1, 3)] = x;
        a[(2 * i + 1, 4)] = y;
        a[(2 * i + 1, 5)] = 1.0;
        a[(2 * i + 1, 6)] = -v * x;
        a[(2 * i + 1, 7)] = -v * y;
        b[2 * i + 1] = v;
    }
    let h = a.lu().solve(&b)?;
    let m = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0);
    (m.determinant().abs() > MIN_HOMOGRAPHY_DET).then_some(m)
}

/// Renders the texture through a homography into a texture-sized frame.
/// Pixels whose preimage falls outside the texture get mid-gray 0.5.
pub fn render_view(texture: &Image, homography: &Homography) -> Result<Image> {
    let inv = homography
        .try_inverse()
        .filter(|_| homography.determinant().abs() > MIN_HOMOGRAPHY_DET)
        .ok_or_else(|| Error::DegenerateGeometry("render_view needs an invertible homography".into()))?;
    let (h, w) = (texture.height(), texture.width());
    let (max_x, max_y) = ((w - 1) as f64, (h - 1) as f64);
    let mut out = Image::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let p = warp_point(&inv, (x as f64, y as f64));
            let rgb = match p {
                Ok((tx, ty)) if (0.0..=max_x).contains(&tx) && (0.0..=max_y).contains(&ty) => {
                    texture.bilinear(tx, ty)
                }
                _ => [0.5, 0.5, 0.5],
            };
            out.put(x, y, rgb);
        }
    }
    Ok(out)
}

/// Samples per-view homographies by perturbing the four texture corners with
/// uniform offsets of magnitude `spread * min(h, w)` and solving the 4-point
/// DLT. Degenerate draws are resampled up to 100 times per view.
pub fn generate_scene(texture: &Image, n_views: usize, spread: f64, seed: u64) -> Result<Scene> {
    if texture.height() < MIN_SIDE || texture.width() < MIN_SIDE {
        return Err(Error::InvalidInput("texture must be at least 8x8".into()));
    }
    if !texture.is_unit_range() {
        return Err(Error::InvalidInput("texture values must lie in [0,1]".into()));
    }
    if n_views < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 views, got {n_views}")));
    }
    if !(0.0..=0.3).contains(&spread) {
        return Err(Error::InvalidInput(format!("spread must lie in [0, 0.3], got {spread}")));
    }
    let (h, w) = (texture.height(), texture.width());
    let corners = [
        (0.0, 0.0),
        ((w - 1) as f64, 0.0),
        ((w - 1) as f64, (h - 1) as f64),
        (0.0, (h - 1) as f64),
    ];
    let magnitude = spread * h.min(w) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut views = Vec::with_capacity(n_views);
    for id in 0..n_views {
        let mut homography = None;
        for _ in 0..100 {
            let mut dst = corners;
            if magnitude > 0.0 {
                for c in dst.iter_mut() {
                    c.0 += rng.gen_range(-magnitude..=magnitude);
                    c.1 += rng.gen_range(-magnitude..=magnitude);
                }
            }
            if let Some(m) = dlt_homography(&corners, &dst) {
                homography = Some(m);
                break;
            }
        }
        let homography = homography.ok_or_else(|| {
            Error::DegenerateGeometry(format!(
                "no invertible homography for view {id} after 100 draws"
            ))
        })?;
        let image = render_view(texture, &homography)?;
        views.push(View { id: id as u32, image, homography });
    }
    Scene::new(views, Some(texture.clone()), seed)
}

// ── Test textures ────────────────────────────────────────────────────────────

/// Two-tone checkerboard with the given cell size in pixels.
pub fn checkerboard(height: usize, width: usize, cell: usize) -> Image {
    assert!(cell > 0, "cell size must be positive");
    let light = [0.9, 0.8, 0.65];
    let dark = [0.15, 0.25, 0.4];
    Image::from_fn(height, width, |x, y| {
        if (x / cell + y / cell) % 2 == 0 {
            light
        } else {
            dark
        }
    })
}

/// Smooth multi-octave value noise, centered at 0.5. Band-limited by design so
/// bilinear resampling stays faithful.
pub fn noise_texture(height: usize, width: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Image::filled(height, width, 0.5);
    let base = height.min(width);
    let mut amplitude = 0.24;
    for octave in 0..3 {
        let cell = (base / (4 << octave)).max(4);
        let gw = width / cell + 2;
        let gh = height / cell + 2;
        let mut lattice = vec![[0.0f64; 3]; gw * gh];
        for p in lattice.iter_mut() {
            for c in p.iter_mut() {
                *c = rng.gen_range(-1.0..=1.0);
            }
        }
        let smooth = |u: f64| u * u * u * (u * (u * 6.0 - 15.0) + 10.0);
        for y in 0..height {
            for x in 0..width {
                let gx = x as f64 / cell as f64;
                let gy = y as f64 / cell as f64;
                let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
                let (fx, fy) = (smooth(gx - ix as f64), smooth(gy - iy as f64));
                let mut rgb = out.get(x, y);
                for c in 0..3 {
                    let v00 = lattice[iy * gw + ix][c];
                    let v10 = lattice[iy * gw + ix + 1][c];
                    let v01 = lattice[(iy + 1) * gw + ix][c];
                    let v11 = lattice[(iy + 1) * gw + ix + 1][c];
                    let v = (1.0 - fy) * ((1.0 - fx) * v00 + fx * v10)
                        + fy * ((1.0 - fx) * v01 + fx * v11);
                    rgb[c] += amplitude * v;
                }
                out.put(x, y, rgb);
            }
        }
        amplitude *= 0.5;
    }
    out.map(|v| v.clamp(0.05, 0.95))
}

// ── Disk format ──────────────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct SceneManifest {
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    base_texture: Option<String>,
    views: Vec<ViewManifest>,
}

#[derive(Serialize, Deserialize)]
struct ViewManifest {
    id: u32,
    image: String,
    /// Row-major 3x3.
    homography: [f64; 9],
}

/// Writes `scene.json` plus one 8-bit PNG per image into `dir`.
pub fn save_scene(scene: &Scene, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = SceneManifest {
        seed: scene.seed,
        base_texture: scene.base_texture.as_ref().map(|_| "base_texture.png".to_string()),
        views: Vec::new(),
    };
    if let Some(tex) = &scene.base_texture {
        tex.save_png(&dir.join("base_texture.png"))?;
    }
    for v in &scene.views {
        let name = format!("view_{:03}.png", v.id);
        v.image.save_png(&dir.join(&name))?;
        let m = v.homography;
        manifest.views.push(ViewManifest {
            id: v.id,
            image: name,
            homography: [
                m[(0, 0)],
                m[(0, 1)],
                m[(0, 2)],
                m[(1, 0)],
                m[(1, 1)],
                m[(1, 2)],
                m[(2, 0)],
                m[(2, 1)],
                m[(2, 2)],
            ],
        });
    }
    let path = dir.join("scene.json");
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json).map_err(|e| Error::io(path, e))
}

/// Loads a scene directory written by [`save_scene`]; `dir` may also point at
/// the `scene.json` itself.
pub fn load_scene(dir: &Path) -> Result<Scene> {
    let (dir, manifest_path) = if dir.is_file() {
        (dir.parent().unwrap_or(Path::new(".")).to_path_buf(), dir.to_path_buf())
    } else {
        (dir.to_path_buf(), dir.join("scene.json"))
    };
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: SceneManifest = serde_json::from_str(&text)
        .map_err(|e| Error::parse(&manifest_path, e.line(), e.to_string()))?;
    let base_texture = manifest
        .base_texture
        .as_ref()
        .map(|name| Image::load_png(&dir.join(name)))
        .transpose()?;
    let mut views = Vec::new();
    for vm in &manifest.views {
        let image = Image::load_png(&dir.join(&vm.image))?;
        let h = vm.homography;
        views.push(View {
            id: vm.id,
            image,
            homography: Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]),
        });
    }
    Scene::new(views, base_texture, manifest.seed)
}
