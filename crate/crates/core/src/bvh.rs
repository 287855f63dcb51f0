//! BVH export (and a reader for what we write).
//!
//! Rotation channels are `Zrotation Yrotation Xrotation`, i.e. the local
//! rotation is `Rz · Ry · Rx` in degrees.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{io_err, Error, Result};
use crate::skeleton::{
    quat_from_axis_angle, quat_mul, quat_to_matrix, Joint, Motion, Quat, Skeleton, Vec3,
};

/// `(z, y, x)` Euler angles in degrees for a unit quaternion.
pub fn quat_to_euler_zyx(q: &Quat) -> [f64; 3] {
    let m = quat_to_matrix(*q);
    let y = (-m[2][0]).clamp(-1.0, 1.0).asin();
    let (z, x) = if m[2][0].abs() < 1.0 - 1e-12 {
        (m[1][0].atan2(m[0][0]), m[2][1].atan2(m[2][2]))
    } else {
        // Gimbal lock: fold everything into z.
        ((-m[0][1]).atan2(m[1][1]), 0.0)
    };
    [z.to_degrees(), y.to_degrees(), x.to_degrees()]
}

pub fn euler_zyx_to_quat(zyx_deg: &[f64; 3]) -> Quat {
    let qz = quat_from_axis_angle(&[0.0, 0.0, 1.0], zyx_deg[0].to_radians());
    let qy = quat_from_axis_angle(&[0.0, 1.0, 0.0], zyx_deg[1].to_radians());
    let qx = quat_from_axis_angle(&[1.0, 0.0, 0.0], zyx_deg[2].to_radians());
    quat_mul(&quat_mul(&qz, &qy), &qx)
}

pub fn to_bvh_string(skeleton: &Skeleton, motion: &Motion) -> Result<String> {
    if motion.num_joints() != skeleton.num_joints() {
        return Err(Error::Contract(format!(
            "motion has {} joints, skeleton {}",
            motion.num_joints(),
            skeleton.num_joints()
        )));
    }
    let joints = skeleton.joints();
    let mut out = String::from("HIERARCHY\n");
    write_joint(&mut out, joints, 0, 0);
    let _ = writeln!(out, "MOTION");
    let _ = writeln!(out, "Frames: {}", motion.num_frames());
    let _ = writeln!(out, "Frame Time: {:.6}", 1.0 / motion.fps);
    let order = dfs_order(joints);
    for (root, frame) in motion.root_translation.iter().zip(&motion.rotations) {
        let mut fields = vec![root[0], root[1], root[2]];
        for &k in &order {
            fields.extend(quat_to_euler_zyx(&frame[k]));
        }
        let line: Vec<String> = fields.iter().map(|v| fmt_num(*v)).collect();
        let _ = writeln!(out, "{}", line.join(" "));
    }
    Ok(out)
}

pub fn export_bvh(skeleton: &Skeleton, motion: &Motion, path: &Path) -> Result<()> {
    let text = to_bvh_string(skeleton, motion)?;
    fs::write(path, text).map_err(io_err(path))
}

fn fmt_num(v: f64) -> String {
    let s = format!("{v:.6}");
    if s == "-0.000000" {
        "0.000000".into()
    } else {
        s
    }
}

fn children(joints: &[Joint], k: usize) -> impl Iterator<Item = usize> + '_ {
    joints
        .iter()
        .enumerate()
        .filter(move |(_, j)| j.parent == Some(k))
        .map(|(i, _)| i)
}

fn dfs_order(joints: &[Joint]) -> Vec<usize> {
    fn visit(joints: &[Joint], k: usize, out: &mut Vec<usize>) {
        out.push(k);
        for c in children(joints, k) {
            visit(joints, c, out);
        }
    }
    let mut out = Vec::with_capacity(joints.len());
    visit(joints, 0, &mut out);
    out
}

fn write_joint(out: &mut String, joints: &[Joint], k: usize, depth: usize) {
    let pad = "  ".repeat(depth);
    let j = &joints[k];
    let kind = if j.parent.is_none() { "ROOT" } else { "JOINT" };
    let _ = writeln!(out, "{pad}{kind} {}", j.name);
    let _ = writeln!(out, "{pad}{{");
    let o = j.offset;
    let _ = writeln!(
        out,
        "{pad}  OFFSET {} {} {}",
        fmt_num(o[0]),
        fmt_num(o[1]),
        fmt_num(o[2])
    );
    if j.parent.is_none() {
        let _ = writeln!(
            out,
            "{pad}  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation"
        );
    } else {
        let _ = writeln!(out, "{pad}  CHANNELS 3 Zrotation Yrotation Xrotation");
    }
    let kids: Vec<usize> = children(joints, k).collect();
    if kids.is_empty() {
        let _ = writeln!(out, "{pad}  End Site");
        let _ = writeln!(out, "{pad}  {{");
        let _ = writeln!(out, "{pad}    OFFSET 0.000000 0.000000 0.000000");
        let _ = writeln!(out, "{pad}  }}");
    }
    for c in kids {
        write_joint(out, joints, c, depth + 1);
    }
    let _ = writeln!(out, "{pad}}}");
}

/// Joint hierarchy and motion read back from BVH text. Joints are listed in
/// file (depth-first) order.
#[derive(Debug, Clone)]
pub struct ParsedBvh {
    pub joints: Vec<Joint>,
    pub frame_time: f64,
    pub root_translation: Vec<Vec3>,
    pub rotations: Vec<Vec<Quat>>,
}

pub fn parse_bvh(text: &str) -> Result<ParsedBvh> {
    let mut tokens = text.split_whitespace().peekable();
    let mut joints: Vec<Joint> = Vec::new();
    let mut stack: Vec<Option<usize>> = Vec::new();
    let mut pending_end_site = false;
    let bad = |m: &str| Error::Parse {
        line: 0,
        message: format!("bvh: {m}"),
    };
    let num = |t: Option<&str>| -> Result<f64> {
        t.ok_or_else(|| bad("unexpected end"))?
            .parse::<f64>()
            .map_err(|e| bad(&e.to_string()))
    };

    while let Some(tok) = tokens.next() {
        match tok {
            "HIERARCHY" => {}
            "ROOT" | "JOINT" => {
                let name = tokens.next().ok_or_else(|| bad("joint without name"))?;
                let parent = stack.iter().rev().find_map(|s| *s);
                joints.push(Joint {
                    name: name.to_string(),
                    parent,
                    offset: [0.0; 3],
                });
            }
            "End" => {
                tokens.next();
                pending_end_site = true;
            }
            "{" => {
                if pending_end_site {
                    stack.push(None);
                    pending_end_site = false;
                } else {
                    stack.push(Some(joints.len() - 1));
                }
            }
            "}" => {
                stack.pop();
            }
            "OFFSET" => {
                let o = [
                    num(tokens.next())?,
                    num(tokens.next())?,
                    num(tokens.next())?,
                ];
                if let Some(Some(k)) = stack.last() {
                    joints[*k].offset = o;
                }
            }
            "CHANNELS" => {
                let count = num(tokens.next())? as usize;
                for _ in 0..count {
                    tokens.next();
                }
            }
            "MOTION" => break,
            other => return Err(bad(&format!("unexpected token {other:?}"))),
        }
    }

    let expect = |t: Option<&str>, word: &str| -> Result<()> {
        match t {
            Some(t) if t == word => Ok(()),
            other => Err(bad(&format!("expected {word}, found {other:?}"))),
        }
    };
    expect(tokens.next(), "Frames:")?;
    let frames = num(tokens.next())? as usize;
    expect(tokens.next(), "Frame")?;
    expect(tokens.next(), "Time:")?;
    let frame_time = num(tokens.next())?;

    let mut root_translation = Vec::with_capacity(frames);
    let mut rotations = Vec::with_capacity(frames);
    for _ in 0..frames {
        root_translation.push([
            num(tokens.next())?,
            num(tokens.next())?,
            num(tokens.next())?,
        ]);
        let mut frame = Vec::with_capacity(joints.len());
        for _ in 0..joints.len() {
            let zyx = [
                num(tokens.next())?,
                num(tokens.next())?,
                num(tokens.next())?,
            ];
            frame.push(euler_zyx_to_quat(&zyx));
        }
        rotations.push(frame);
    }
    Ok(ParsedBvh {
        joints,
        frame_time,
        root_translation,
        rotations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_frame_has_zero_channels() {
        let skel = Skeleton::desk();
        let m = Motion::rest(&skel, 1, 20.0, [0.0, 0.95, 0.0]);
        let text = to_bvh_string(&skel, &m).unwrap();
        assert!(text.contains("Frames: 1\n"));
        assert!(text.contains("Frame Time: 0.050000\n"));
        let last = text.lines().last().unwrap();
        let values: Vec<f64> = last.split(' ').map(|v| v.parse().unwrap()).collect();
        assert_eq!(values.len(), 3 + 3 * skel.num_joints());
        assert!(values[3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn euler_round_trip() {
        for zyx in [[10.0, 20.0, 30.0], [-170.0, 45.0, 5.0], [0.0, -80.0, 120.0]] {
            let q = euler_zyx_to_quat(&zyx);
            let back = quat_to_euler_zyx(&q);
            for a in 0..3 {
                assert!((back[a] - zyx[a]).abs() < 1e-9, "{zyx:?} -> {back:?}");
            }
        }
    }
}
