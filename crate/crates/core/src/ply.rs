//! Scene files: binary little-endian PLY, one `vertex` per Gaussian.
//!
//! Properties are `x y z`, `rot_w rot_x rot_y rot_z`, `scale_x scale_y
//! scale_z` (natural log), `red green blue` (linear [0, 1]), `opacity`
//! (logit) and `is_padded` (uchar). The writer emits doubles; the reader also
//! accepts float32 and any property order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Vector3, Vector4};
use thiserror::Error;

use crate::scene::{Gaussian, MaterialParams, Scene};

#[derive(Debug, Error)]
pub enum PlyError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed header: {0}")]
    Header(String),
    #[error("record {index}: {reason}")]
    Record { index: usize, reason: String },
}

const FIELDS: [&str; 14] = [
    "x", "y", "z", "rot_w", "rot_x", "rot_y", "rot_z", "scale_x", "scale_y", "scale_z", "red", "green",
    "blue", "opacity",
];

#[derive(Debug, Clone, Copy)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

pub fn write_scene(scene: &Scene, w: impl Write) -> std::io::Result<()> {
    let mut w = BufWriter::new(w);
    writeln!(w, "ply")?;
    writeln!(w, "format binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", scene.gaussians.len())?;
    for name in FIELDS {
        writeln!(w, "property double {name}")?;
    }
    writeln!(w, "property uchar is_padded")?;
    writeln!(w, "end_header")?;
    for g in &scene.gaussians {
        let values = [
            g.position.x,
            g.position.y,
            g.position.z,
            g.rotation[0],
            g.rotation[1],
            g.rotation[2],
            g.rotation[3],
            g.log_scale.x,
            g.log_scale.y,
            g.log_scale.z,
            g.color.x,
            g.color.y,
            g.color.z,
            g.opacity_logit,
        ];
        for v in values {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[g.padded as u8])?;
    }
    w.flush()
}

pub fn save_scene(scene: &Scene, path: impl AsRef<Path>) -> Result<(), PlyError> {
    write_scene(scene, File::create(path)?)?;
    Ok(())
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene, PlyError> {
    read_scene(File::open(path)?)
}

/// Parses a scene; material parameters are not part of the file and come back
/// as defaults.
pub fn read_scene(r: impl Read) -> Result<Scene, PlyError> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    let mut next_line = |r: &mut BufReader<_>| -> Result<String, PlyError> {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(PlyError::Header("unexpected end of header".into()));
        }
        Ok(line.trim_end().to_string())
    };

    if next_line(&mut r)? != "ply" {
        return Err(PlyError::Header("missing 'ply' magic".into()));
    }
    let mut count = None;
    let mut props: Vec<(String, Scalar)> = Vec::new();
    let mut in_vertex = false;
    loop {
        let l = next_line(&mut r)?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => break,
            ["format", "binary_little_endian", _] => {}
            ["format", f, ..] => return Err(PlyError::Header(format!("unsupported format '{f}'"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", "vertex", n] => {
                count = Some(n.parse::<usize>().map_err(|_| PlyError::Header(format!("bad count '{n}'")))?);
                in_vertex = true;
            }
            ["element", name, _] => {
                return Err(PlyError::Header(format!("unsupported element '{name}'")));
            }
            ["property", ty, name] if in_vertex => {
                let s = Scalar::parse(ty).ok_or_else(|| PlyError::Header(format!("unknown type '{ty}'")))?;
                props.push((name.to_string(), s));
            }
            _ => return Err(PlyError::Header(format!("unexpected line '{l}'"))),
        }
    }
    let count = count.ok_or_else(|| PlyError::Header("no vertex element".into()))?;

    let mut slots = [usize::MAX; 14];
    let mut padded_slot = None;
    for (i, (name, _)) in props.iter().enumerate() {
        if let Some(k) = FIELDS.iter().position(|f| f == name) {
            slots[k] = i;
        } else if name == "is_padded" {
            padded_slot = Some(i);
        }
    }
    if let Some(k) = slots.iter().position(|&s| s == usize::MAX) {
        return Err(PlyError::Header(format!("missing property '{}'", FIELDS[k])));
    }
    let offsets: Vec<usize> = props
        .iter()
        .scan(0, |off, (_, s)| {
            let o = *off;
            *off += s.size();
            Some(o)
        })
        .collect();
    let stride: usize = props.iter().map(|(_, s)| s.size()).sum();

    let mut buf = vec![0u8; stride];
    let mut gaussians = Vec::with_capacity(count);
    for index in 0..count {
        r.read_exact(&mut buf).map_err(|_| PlyError::Record { index, reason: "truncated record".into() })?;
        let get = |k: usize| props[k].1.read(&buf[offsets[k]..]);
        let v: Vec<f64> = slots.iter().map(|&k| get(k)).collect();
        let g = Gaussian {
            position: Vector3::new(v[0], v[1], v[2]),
            rotation: Vector4::new(v[3], v[4], v[5], v[6]),
            log_scale: Vector3::new(v[7], v[8], v[9]),
            color: Vector3::new(v[10], v[11], v[12]),
            opacity_logit: v[13],
            padded: padded_slot.is_some_and(|k| get(k) != 0.0),
        };
        g.validate().map_err(|e| PlyError::Record { index, reason: e.to_string() })?;
        gaussians.push(g);
    }
    Ok(Scene::new(gaussians, MaterialParams::default()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_scene() -> Scene {
        let mut gs = vec![
            Gaussian::new(
                Vector3::new(0.1, -0.2, 3.0),
                Vector4::new(0.9, 0.1, -0.3, 0.2),
                Vector3::new(0.01, 0.02, 0.03),
                Vector3::new(0.2, 0.4, 0.6),
                0.7,
            ),
            Gaussian::isotropic(Vector3::new(1.0, 2.0, 3.0), 10.0, Vector3::new(1.0, 0.0, 0.3), 0.0),
        ];
        gs[1].padded = true;
        Scene::new(gs, MaterialParams::default())
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let scene = sample_scene();
        let mut bytes = Vec::new();
        write_scene(&scene, &mut bytes).unwrap();
        let back = read_scene(bytes.as_slice()).unwrap();
        assert_eq!(back, scene);
    }

    #[test]
    fn empty_scene_round_trips() {
        let scene = Scene::empty();
        let mut bytes = Vec::new();
        write_scene(&scene, &mut bytes).unwrap();
        let back = read_scene(bytes.as_slice()).unwrap();
        assert!(back.gaussians.is_empty());
    }

    #[test]
    fn nan_position_names_record() {
        let mut scene = sample_scene();
        scene.gaussians[1].position.y = f64::NAN;
        let mut bytes = Vec::new();
        write_scene(&scene, &mut bytes).unwrap();
        match read_scene(bytes.as_slice()) {
            Err(PlyError::Record { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected record error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_names_record() {
        let mut bytes = Vec::new();
        write_scene(&sample_scene(), &mut bytes).unwrap();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(read_scene(bytes.as_slice()), Err(PlyError::Record { index: 1, .. })));
    }

    #[test]
    fn accepts_float32_properties_in_any_order() {
        let mut bytes = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\n".to_vec();
        let order = ["opacity", "red", "green", "blue", "x", "y", "z", "scale_x", "scale_y", "scale_z", "rot_w", "rot_x", "rot_y", "rot_z"];
        for n in order {
            bytes.extend_from_slice(format!("property float {n}\n").as_bytes());
        }
        bytes.extend_from_slice(b"end_header\n");
        let vals = [0.0f32, 0.5, 0.25, 1.0, 1.0, 2.0, 3.0, -1.0, -2.0, -3.0, 1.0, 0.0, 0.0, 0.0];
        for v in vals {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let s = read_scene(bytes.as_slice()).unwrap();
        let g = &s.gaussians[0];
        assert_eq!(g.position, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(g.opacity(), 0.5);
        assert!(!g.padded);
    }

    proptest! {
        #[test]
        fn arbitrary_scenes_round_trip(
            recs in prop::collection::vec(
                (prop::array::uniform3(-10.0f64..10.0), prop::array::uniform4(-1.0f64..1.0),
                 prop::array::uniform3(-6.0f64..1.0), prop::array::uniform3(0.0f64..=1.0),
                 -20.0f64..20.0, any::<bool>()),
                0..20)
        ) {
            let gaussians: Vec<Gaussian> = recs.into_iter().filter_map(|(p, q, s, c, o, padded)| {
                let q = Vector4::from(q);
                (q.norm() > 1e-3).then(|| Gaussian {
                    position: p.into(), rotation: q.normalize(), log_scale: s.into(),
                    color: c.into(), opacity_logit: o, padded,
                })
            }).collect();
            let scene = Scene::new(gaussians, MaterialParams::default());
            let mut bytes = Vec::new();
            write_scene(&scene, &mut bytes).unwrap();
            prop_assert_eq!(read_scene(bytes.as_slice()).unwrap(), scene);
        }
    }
}
