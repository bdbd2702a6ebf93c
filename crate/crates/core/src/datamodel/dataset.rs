use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Aabb, CameraIntrinsics, Pose, Raster};
use crate::error::{invalid, Error, Result};

/// One posed observation: color, ray-distance depth and instance ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    /// 8-bit color; [`Frame::color`] exposes it in `[0, 1]`.
    pub rgb: Raster<[u8; 3]>,
    /// Distance along the pixel ray to the first surface, meters; 0 = invalid.
    pub depth: Raster<f32>,
    /// Instance id per pixel, 0 = background.
    pub mask: Raster<u8>,
    pub pose: Pose,
}

impl Frame {
    pub fn color(&self, u: u32, v: u32) -> [f32; 3] {
        self.rgb.get(u, v).map(|c| c as f32 / 255.0)
    }

    pub fn dims(&self) -> (u32, u32) {
        self.mask.dims()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: u8,
    pub name: String,
    pub aabb_min: [f64; 3],
    pub aabb_max: [f64; 3],
}

impl ObjectSpec {
    pub fn aabb(&self) -> Aabb {
        Aabb {
            min: self.aabb_min,
            max: self.aabb_max,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneDataset {
    pub intrinsics: CameraIntrinsics,
    pub frames: Vec<Frame>,
    pub objects: Vec<ObjectSpec>,
}

impl SceneDataset {
    pub fn object(&self, id: u8) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn object_by_name(&self, name: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn poses(&self) -> Vec<Pose> {
        self.frames.iter().map(|f| f.pose).collect()
    }

    pub fn with_poses(&self, poses: &[Pose]) -> SceneDataset {
        let mut out = self.clone();
        for (f, p) in out.frames.iter_mut().zip(poses) {
            f.pose = *p;
        }
        out
    }

    /// First `n` frames.
    pub fn truncated(&self, n: usize) -> SceneDataset {
        SceneDataset {
            intrinsics: self.intrinsics,
            frames: self.frames.iter().take(n).cloned().collect(),
            objects: self.objects.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.intrinsics.validate()?;
        if self.frames.is_empty() {
            return Err(invalid("dataset", "no frames"));
        }
        let dims = (self.intrinsics.width, self.intrinsics.height);
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.id == 0 {
                return Err(invalid("dataset", "object id 0 is reserved for background"));
            }
            if self.objects[..i].iter().any(|o| o.id == obj.id) {
                return Err(invalid("dataset", format!("duplicate object id {}", obj.id)));
            }
            obj.aabb().validate()?;
        }
        let mut declared = [false; 256];
        declared[0] = true;
        for o in &self.objects {
            declared[o.id as usize] = true;
        }
        for (i, f) in self.frames.iter().enumerate() {
            if f.rgb.dims() != dims || f.depth.dims() != dims || f.mask.dims() != dims {
                return Err(Error::InconsistentRasterSize(format!(
                    "frame {i}: expected {}x{}",
                    dims.0, dims.1
                )));
            }
            if let Some(d) = f.depth.data().iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
                return Err(invalid("dataset", format!("frame {i}: depth value {d}")));
            }
            if let Some(&id) = f.mask.data().iter().find(|&&m| !declared[m as usize]) {
                return Err(Error::UndeclaredInstanceId(id));
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    camera: CameraIntrinsics,
    frames: Vec<ManifestFrame>,
    objects: Vec<ObjectSpec>,
}

#[derive(Serialize, Deserialize)]
struct ManifestFrame {
    rgb: String,
    depth: String,
    mask: String,
    camera_to_world: Vec<f64>,
}

const DPT_MAGIC: &[u8; 4] = b"DPT1";

/// Encodes a depth raster: `DPT1`, u32 LE width, u32 LE height, then
/// row-major little-endian f32 values.
pub fn write_dpt(depth: &Raster<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + depth.data().len() * 4);
    out.extend_from_slice(DPT_MAGIC);
    out.extend_from_slice(&depth.width().to_le_bytes());
    out.extend_from_slice(&depth.height().to_le_bytes());
    for v in depth.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_dpt(bytes: &[u8]) -> Result<Raster<f32>> {
    let bad = |why: &str| Error::Format {
        kind: "dpt",
        why: why.to_string(),
    };
    if bytes.len() < 12 || &bytes[..4] != DPT_MAGIC {
        return Err(bad("missing DPT1 header"));
    }
    let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let n = width as usize * height as usize;
    if bytes.len() != 12 + 4 * n {
        return Err(bad(&format!(
            "payload of {} bytes for {width}x{height}",
            bytes.len() - 12
        )));
    }
    let data = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Raster::from_vec(width, height, data)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| match e.kind() {
        ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    let bytes = read_file(path)?;
    Ok(image::load_from_memory_with_format(
        &bytes,
        image::ImageFormat::Png,
    )?)
}

pub fn save_dataset(ds: &SceneDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    for sub in ["rgb", "depth", "mask"] {
        fs::create_dir_all(dir.join(sub))?;
    }
    let (w, h) = (ds.intrinsics.width, ds.intrinsics.height);
    let mut frames = Vec::with_capacity(ds.frames.len());
    for (i, f) in ds.frames.iter().enumerate() {
        let rgb = format!("rgb/{i:04}.png");
        let depth = format!("depth/{i:04}.dpt");
        let mask = format!("mask/{i:04}.png");
        let flat: Vec<u8> = f.rgb.data().iter().flatten().copied().collect();
        RgbImage::from_raw(w, h, flat)
            .expect("raster size checked")
            .save(dir.join(&rgb))?;
        fs::write(dir.join(&depth), write_dpt(&f.depth))?;
        GrayImage::from_raw(w, h, f.mask.data().to_vec())
            .expect("raster size checked")
            .save(dir.join(&mask))?;
        frames.push(ManifestFrame {
            rgb,
            depth,
            mask,
            camera_to_world: f.pose.to_row_major().to_vec(),
        });
    }
    let manifest = Manifest {
        camera: ds.intrinsics,
        frames,
        objects: ds.objects.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let manifest_path: PathBuf = dir.join("manifest.json");
    if !manifest_path.is_file() {
        return Err(Error::ManifestNotFound(manifest_path));
    }
    let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path)?)?;
    manifest.camera.validate()?;
    let (w, h) = (manifest.camera.width, manifest.camera.height);
    let check = |what: &str, dims: (u32, u32)| -> Result<()> {
        if dims != (w, h) {
            return Err(Error::InconsistentRasterSize(format!(
                "{what} is {}x{}, camera is {w}x{h}",
                dims.0, dims.1
            )));
        }
        Ok(())
    };
    let mut frames = Vec::with_capacity(manifest.frames.len());
    for mf in &manifest.frames {
        let rgb_img = open_image(&dir.join(&mf.rgb))?.to_rgb8();
        check(&mf.rgb, rgb_img.dimensions())?;
        let rgb = Raster::from_vec(w, h, rgb_img.pixels().map(|p| p.0).collect())?;
        let depth = read_dpt(&read_file(&dir.join(&mf.depth))?)?;
        check(&mf.depth, depth.dims())?;
        let mask_img = open_image(&dir.join(&mf.mask))?.to_luma8();
        check(&mf.mask, mask_img.dimensions())?;
        let mask = Raster::from_vec(w, h, mask_img.into_raw())?;
        frames.push(Frame {
            rgb,
            depth,
            mask,
            pose: Pose::from_row_major(&mf.camera_to_world)?,
        });
    }
    let ds = SceneDataset {
        intrinsics: manifest.camera,
        frames,
        objects: manifest.objects,
    };
    ds.validate()?;
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;

    fn tiny_dataset(n_frames: usize) -> SceneDataset {
        let k = CameraIntrinsics::centered(6, 4, 5.0);
        let frames = (0..n_frames)
            .map(|i| {
                let mut depth = Raster::filled(6, 4, 0.5f32 + i as f32);
                depth.set(0, 0, 1.25);
                let mut mask = Raster::filled(6, 4, 0u8);
                mask.set(2, 1, 3);
                let mut rgb = Raster::filled(6, 4, [10u8, 20, 30]);
                rgb.set(5, 3, [255, 0, 7]);
                Frame {
                    rgb,
                    depth,
                    mask,
                    pose: Pose::from_axis_angle(
                        Vector3::new(0.2, 1.0, -0.3),
                        0.7 + i as f64,
                        Vector3::new(0.1, -0.2, 0.6),
                    ),
                }
            })
            .collect();
        SceneDataset {
            intrinsics: k,
            frames,
            objects: vec![ObjectSpec {
                id: 3,
                name: "cup".into(),
                aabb_min: [-0.1, -0.1, 0.0],
                aabb_max: [0.1, 0.1, 0.2],
            }],
        }
    }

    fn assert_same(a: &SceneDataset, b: &SceneDataset) {
        assert_eq!(a.intrinsics, b.intrinsics);
        assert_eq!(a.objects, b.objects);
        assert_eq!(a.frames.len(), b.frames.len());
        for (fa, fb) in a.frames.iter().zip(&b.frames) {
            assert_eq!(fa.rgb, fb.rgb);
            assert_eq!(fa.mask, fb.mask);
            let bits = |r: &Raster<f32>| r.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&fa.depth), bits(&fb.depth));
            assert!(fa.pose.max_abs_diff(&fb.pose) < 1e-12);
        }
    }

    #[test]
    fn save_then_load_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let ds = tiny_dataset(2);
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_same(&ds, &back);
    }

    #[test]
    fn depth_file_bytes_are_little_endian_f32() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny_dataset(1), dir.path()).unwrap();
        let bytes = fs::read(dir.path().join("depth/0000.dpt")).unwrap();
        assert_eq!(&bytes[..4], b"DPT1");
        assert_eq!(&bytes[4..8], &6u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &4u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &1.25f32.to_le_bytes());
        assert_eq!(&bytes[12..16], &[0x00, 0x00, 0xa0, 0x3f]);
    }

    #[test]
    fn empty_object_list_is_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = tiny_dataset(1);
        ds.objects.clear();
        ds.frames[0].mask = Raster::filled(6, 4, 0);
        save_dataset(&ds, dir.path()).unwrap();
        let json: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("manifest.json")).unwrap()).unwrap();
        assert_eq!(json["objects"], serde_json::json!([]));
        assert_eq!(json["frames"][0]["camera_to_world"].as_array().unwrap().len(), 16);
        assert_same(&ds, &load_dataset(dir.path()).unwrap());
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("manifest not found"));
    }

    #[test]
    fn missing_depth_file() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny_dataset(2), dir.path()).unwrap();
        fs::remove_file(dir.path().join("depth/0001.dpt")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("file not found"), "{err}");
    }

    #[test]
    fn mismatched_raster_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny_dataset(1), dir.path()).unwrap();
        fs::write(
            dir.path().join("depth/0000.dpt"),
            write_dpt(&Raster::filled(3, 3, 1.0)),
        )
        .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("inconsistent raster size"), "{err}");
    }

    #[test]
    fn undeclared_mask_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = tiny_dataset(1);
        save_dataset(&ds, dir.path()).unwrap();
        ds.frames[0].mask.set(0, 0, 9);
        GrayImage::from_raw(6, 4, ds.frames[0].mask.data().to_vec())
            .unwrap()
            .save(dir.path().join("mask/0000.png"))
            .unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("undeclared instance id"), "{err}");
    }

    #[test]
    fn truncated_dpt_is_rejected() {
        let mut bytes = write_dpt(&Raster::filled(2, 2, 0.5));
        bytes.pop();
        assert!(read_dpt(&bytes).is_err());
        assert!(read_dpt(b"DPT0\0\0\0\0\0\0\0\0").is_err());
    }
}
