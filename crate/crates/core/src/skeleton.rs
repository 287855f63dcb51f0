//! Skeleton, motion clips, forward kinematics and foot contacts.
//!
//! Conventions: right-handed, Y up, the character faces +Z with its left
//! side on +X. Quaternions are stored `(w, x, y, z)` and rotate column
//! vectors; every joint rotation is expressed in its parent's frame.

use std::collections::BTreeMap;

use fgmdm_tensor::{CustomOp, Real, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::description::PartLabel;
use crate::error::{ensure, Error, Result};

pub type Quat = [f64; 4];
pub type Vec3 = [f64; 3];

pub const IDENTITY: Quat = [1.0, 0.0, 0.0, 0.0];

/// Maximum deviation from unit norm accepted when ingesting a motion.
pub const QUAT_NORM_TOLERANCE: f64 = 1e-3;

pub fn quat_norm(q: &Quat) -> f64 {
    q.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Unit quaternion; zero-length input maps to the identity.
pub fn quat_normalize(q: &Quat) -> Quat {
    let n = quat_norm(q);
    if n < 1e-12 {
        return IDENTITY;
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

pub fn quat_mul(a: &Quat, b: &Quat) -> Quat {
    [
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    ]
}

pub fn quat_from_axis_angle(axis: &Vec3, angle: f64) -> Quat {
    let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
    let (s, c) = (angle / 2.0).sin_cos();
    [c, s * axis[0] / n, s * axis[1] / n, s * axis[2] / n]
}

/// Rotation angle between two unit quaternions, in `[0, π]`.
pub fn geodesic_angle(a: &Quat, b: &Quat) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    2.0 * dot.abs().min(1.0).acos()
}

/// Rotation matrix of a unit quaternion.
pub fn quat_to_matrix<F: Real>(q: [F; 4]) -> [[F; 3]; 3] {
    let [w, x, y, z] = q;
    let one = F::one();
    let two = F::lit(2.0);
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

pub fn rotate(q: &Quat, v: &Vec3) -> Vec3 {
    mat_vec(&quat_to_matrix(*q), v)
}

fn mat_vec<F: Real>(m: &[[F; 3]; 3], v: &[F; 3]) -> [F; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn mat_mul<F: Real>(a: &[[F; 3]; 3], b: &[[F; 3]; 3]) -> [[F; 3]; 3] {
    let mut out = [[F::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    pub offset: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    joints: Vec<Joint>,
    foot_joints: Vec<usize>,
    part_map: BTreeMap<PartLabel, Vec<usize>>,
}

impl Skeleton {
    pub fn new(
        joints: Vec<Joint>,
        foot_joints: Vec<usize>,
        part_map: BTreeMap<PartLabel, Vec<usize>>,
    ) -> Result<Self> {
        ensure!(!joints.is_empty(), "skeleton has no joints");
        ensure!(joints[0].parent.is_none(), "joint 0 must be the root");
        for (i, j) in joints.iter().enumerate().skip(1) {
            match j.parent {
                Some(p) if p < i => {}
                _ => {
                    return Err(Error::Contract(format!(
                        "joint {i} ({}) must have a parent that precedes it",
                        j.name
                    )))
                }
            }
        }
        let n = joints.len();
        ensure!(
            foot_joints.iter().all(|&f| f < n),
            "foot joint index out of range"
        );
        for p in PartLabel::ALL {
            let members = part_map
                .get(&p)
                .ok_or_else(|| Error::Contract(format!("part map lacks {p}")))?;
            ensure!(
                !members.is_empty() && members.iter().all(|&j| j < n),
                "part {p} has invalid joints"
            );
        }
        for j in 1..n {
            ensure!(
                part_map.values().any(|m| m.contains(&j)),
                "joint {j} ({}) is not covered by any part",
                joints[j].name
            );
        }
        Ok(Self {
            joints,
            foot_joints,
            part_map,
        })
    }

    /// Seventeen-joint desk skeleton, about 1.7 m tall, feet at the ankles.
    pub fn desk() -> Self {
        let layout: [(&str, Option<usize>, Vec3); 17] = [
            ("pelvis", None, [0.0, 0.0, 0.0]),
            ("waist", Some(0), [0.0, 0.12, 0.0]),
            ("torso", Some(1), [0.0, 0.22, 0.0]),
            ("neck", Some(2), [0.0, 0.24, 0.0]),
            ("head", Some(3), [0.0, 0.15, 0.0]),
            ("left_shoulder", Some(2), [0.18, 0.2, 0.0]),
            ("left_elbow", Some(5), [0.0, -0.28, 0.0]),
            ("left_wrist", Some(6), [0.0, -0.25, 0.0]),
            ("right_shoulder", Some(2), [-0.18, 0.2, 0.0]),
            ("right_elbow", Some(8), [0.0, -0.28, 0.0]),
            ("right_wrist", Some(9), [0.0, -0.25, 0.0]),
            ("left_hip", Some(0), [0.1, -0.06, 0.0]),
            ("left_knee", Some(11), [0.0, -0.43, 0.0]),
            ("left_ankle", Some(12), [0.0, -0.43, 0.0]),
            ("right_hip", Some(0), [-0.1, -0.06, 0.0]),
            ("right_knee", Some(14), [0.0, -0.43, 0.0]),
            ("right_ankle", Some(15), [0.0, -0.43, 0.0]),
        ];
        let joints = layout
            .into_iter()
            .map(|(name, parent, offset)| Joint {
                name: name.to_string(),
                parent,
                offset,
            })
            .collect();
        let part_map = BTreeMap::from([
            (PartLabel::Arms, vec![5, 6, 7, 8, 9, 10]),
            (PartLabel::Legs, vec![11, 12, 13, 14, 15, 16]),
            (PartLabel::Torso, vec![2]),
            (PartLabel::Neck, vec![3, 4]),
            (PartLabel::Buttocks, vec![0]),
            (PartLabel::Waist, vec![1]),
        ]);
        Self::new(joints, vec![13, 16], part_map).expect("desk skeleton is valid")
    }

    /// Standing height of the root above the ground for the desk skeleton
    /// (ankles rest 3 cm above the floor).
    pub const DESK_ROOT_HEIGHT: f64 = 0.95;

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn num_joints(&self) -> usize {
        self.joints.len()
    }

    pub fn foot_joints(&self) -> &[usize] {
        &self.foot_joints
    }

    pub fn part_joints(&self, p: PartLabel) -> &[usize] {
        &self.part_map[&p]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Per-frame width of the flattened network layout `[root(3), quats(4J)]`.
    pub fn flat_width(&self) -> usize {
        3 + 4 * self.joints.len()
    }
}

/// A clip of root translations plus local joint rotations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Motion {
    pub fps: f64,
    pub root_translation: Vec<Vec3>,
    pub rotations: Vec<Vec<Quat>>,
}

impl Motion {
    /// Validates shapes and quaternion norms, then renormalizes.
    pub fn new(fps: f64, root_translation: Vec<Vec3>, rotations: Vec<Vec<Quat>>) -> Result<Self> {
        ensure!(fps > 0.0 && fps.is_finite(), "fps must be positive");
        ensure!(!rotations.is_empty(), "motion needs at least one frame");
        ensure!(
            root_translation.len() == rotations.len(),
            "root translation has {} frames, rotations {}",
            root_translation.len(),
            rotations.len()
        );
        let j = rotations[0].len();
        ensure!(j > 0, "motion has no joints");
        let mut rotations = rotations;
        for (i, frame) in rotations.iter_mut().enumerate() {
            ensure!(
                frame.len() == j,
                "frame {i} has {} joints, expected {j}",
                frame.len()
            );
            for (k, q) in frame.iter_mut().enumerate() {
                let norm = quat_norm(q);
                if !(norm - 1.0).abs().le(&QUAT_NORM_TOLERANCE) {
                    return Err(Error::Validation {
                        line: 0,
                        message: format!(
                            "frame {i} joint {k}: quaternion norm {norm:.6} is not unit"
                        ),
                    });
                }
                *q = unitize(q);
            }
        }
        for (i, r) in root_translation.iter().enumerate() {
            ensure!(
                r.iter().all(|v| v.is_finite()),
                "frame {i}: non-finite root translation"
            );
        }
        Ok(Self {
            fps,
            root_translation,
            rotations,
        })
    }

    /// Every joint at the identity rotation, root standing still.
    pub fn rest(skeleton: &Skeleton, frames: usize, fps: f64, root: Vec3) -> Self {
        Self {
            fps,
            root_translation: vec![root; frames],
            rotations: vec![vec![IDENTITY; skeleton.num_joints()]; frames],
        }
    }

    pub fn num_frames(&self) -> usize {
        self.rotations.len()
    }

    pub fn num_joints(&self) -> usize {
        self.rotations.first().map_or(0, Vec::len)
    }

    pub fn flat_width(&self) -> usize {
        3 + 4 * self.num_joints()
    }

    /// Row-major `n × (3 + 4J)` array.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_frames() * self.flat_width());
        for (root, frame) in self.root_translation.iter().zip(&self.rotations) {
            out.extend_from_slice(root);
            for q in frame {
                out.extend_from_slice(q);
            }
        }
        out
    }

    /// Inverse of [`Motion::to_flat`]; quaternions are renormalized.
    pub fn from_flat(flat: &[f64], joints: usize, fps: f64) -> Result<Self> {
        let width = 3 + 4 * joints;
        ensure!(
            !flat.is_empty() && flat.len().is_multiple_of(width),
            "flat motion length {} is not a multiple of {width}",
            flat.len()
        );
        ensure!(
            flat.iter().all(|v| v.is_finite()),
            "flat motion has non-finite values"
        );
        let mut root_translation = Vec::new();
        let mut rotations = Vec::new();
        for row in flat.chunks(width) {
            root_translation.push([row[0], row[1], row[2]]);
            rotations.push(
                row[3..]
                    .chunks(4)
                    .map(|q| unitize(&[q[0], q[1], q[2], q[3]]))
                    .collect(),
            );
        }
        Ok(Self {
            fps,
            root_translation,
            rotations,
        })
    }

    pub fn renormalized(&self) -> Self {
        let mut out = self.clone();
        for frame in &mut out.rotations {
            for q in frame.iter_mut() {
                *q = unitize(q);
            }
        }
        out
    }
}

/// Normalizes unless already unit to rounding error, so stored motions
/// survive a write/read cycle bit for bit.
fn unitize(q: &Quat) -> Quat {
    if (quat_norm(q) - 1.0).abs() <= 1e-12 {
        *q
    } else {
        quat_normalize(q)
    }
}

/// World-space joint positions, `[frame][joint]`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPositions {
    pub positions: Vec<Vec<Vec3>>,
}

impl JointPositions {
    pub fn num_frames(&self) -> usize {
        self.positions.len()
    }
}

/// Forward kinematics of a motion clip.
pub fn forward_kinematics(skeleton: &Skeleton, motion: &Motion) -> Result<JointPositions> {
    ensure!(
        motion.num_joints() == skeleton.num_joints(),
        "motion has {} joints, skeleton {}",
        motion.num_joints(),
        skeleton.num_joints()
    );
    let flat = motion.to_flat();
    let j = skeleton.num_joints();
    let mut out = vec![0.0; motion.num_frames() * j * 3];
    fk_flat(skeleton, &flat, &mut out);
    Ok(JointPositions {
        positions: out
            .chunks(j * 3)
            .map(|f| f.chunks(3).map(|p| [p[0], p[1], p[2]]).collect())
            .collect(),
    })
}

/// FK over the flattened layout. Quaternions are normalized first, so raw
/// network outputs are accepted. `out` is `n × 3J`.
pub fn fk_flat<F: Real>(skeleton: &Skeleton, flat: &[F], out: &mut [F]) {
    let j = skeleton.num_joints();
    let width = 3 + 4 * j;
    let mut world = vec![[[F::zero(); 3]; 3]; j];
    for (row, pos) in flat.chunks(width).zip(out.chunks_mut(3 * j)) {
        for (k, joint) in skeleton.joints.iter().enumerate() {
            let q = normalize_generic(&row[3 + 4 * k..7 + 4 * k]);
            let local = quat_to_matrix(q);
            match joint.parent {
                None => {
                    world[k] = local;
                    pos[3 * k..3 * k + 3].copy_from_slice(&row[0..3]);
                }
                Some(p) => {
                    let off = joint.offset.map(F::lit);
                    let d = mat_vec(&world[p], &off);
                    for a in 0..3 {
                        pos[3 * k + a] = pos[3 * p + a] + d[a];
                    }
                    world[k] = mat_mul(&world[p], &local);
                }
            }
        }
    }
}

fn normalize_generic<F: Real>(q: &[F]) -> [F; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n < F::lit(1e-12) {
        return [F::one(), F::zero(), F::zero(), F::zero()];
    }
    [q[0] / n, q[1] / n, q[2] / n, q[3] / n]
}

/// `∂R/∂(w,x,y,z)` for the rotation matrix of a (unit) quaternion.
fn quat_matrix_partials<F: Real>(q: [F; 4]) -> [[[F; 3]; 3]; 4] {
    let [w, x, y, z] = q;
    let t = F::lit(2.0);
    let f = F::lit(4.0);
    let o = F::zero();
    [
        [[o, -t * z, t * y], [t * z, o, -t * x], [-t * y, t * x, o]],
        [
            [o, t * y, t * z],
            [t * y, -f * x, -t * w],
            [t * z, t * w, -f * x],
        ],
        [
            [-f * y, t * x, t * w],
            [t * x, o, t * z],
            [-t * w, t * z, -f * y],
        ],
        [
            [-f * z, -t * w, t * x],
            [t * w, -f * z, t * y],
            [t * x, t * y, o],
        ],
    ]
}

/// Differentiable FK node for the autodiff tape: input `n × (3+4J)`,
/// output `n × 3J`.
#[derive(Debug, Clone)]
pub struct FkOp {
    skeleton: Skeleton,
}

impl FkOp {
    pub fn new(skeleton: Skeleton) -> Self {
        Self { skeleton }
    }

    /// Records FK of `x` on the tape.
    pub fn apply<F: Real>(&self, tape: &mut Tape<F>, x: Var) -> Result<Var> {
        let out = self.forward(tape.value(x))?;
        Ok(tape.custom(&[x], out, Box::new(self.clone()))?)
    }

    pub fn forward<F: Real>(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        let (n, w) = x.dims2()?;
        ensure!(
            w == self.skeleton.flat_width(),
            "fk input width {w}, skeleton expects {}",
            self.skeleton.flat_width()
        );
        let j = self.skeleton.num_joints();
        let mut out = vec![F::zero(); n * 3 * j];
        fk_flat(&self.skeleton, x.data(), &mut out);
        Ok(Tensor::new(vec![n, 3 * j], out)?)
    }
}

impl<F: Real> CustomOp<F> for FkOp {
    fn name(&self) -> &'static str {
        "forward_kinematics"
    }

    fn backward(
        &self,
        inputs: &[&Tensor<F>],
        _output: &Tensor<F>,
        grad_out: &Tensor<F>,
    ) -> Vec<Tensor<F>> {
        let x = inputs[0];
        let skel = &self.skeleton;
        let j = skel.num_joints();
        let width = 3 + 4 * j;
        let zero3 = [[F::zero(); 3]; 3];
        let mut gx = vec![F::zero(); x.len()];

        let mut unit = vec![[F::zero(); 4]; j];
        let mut norms = vec![F::one(); j];
        let mut local = vec![zero3; j];
        let mut world = vec![zero3; j];
        let mut g_world = vec![zero3; j];
        let mut g_pos = vec![[F::zero(); 3]; j];

        for ((row, grow), gp_row) in x
            .data()
            .chunks(width)
            .zip(gx.chunks_mut(width))
            .zip(grad_out.data().chunks(3 * j))
        {
            for (k, joint) in skel.joints.iter().enumerate() {
                let q = &row[3 + 4 * k..7 + 4 * k];
                let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
                norms[k] = n;
                unit[k] = normalize_generic(q);
                local[k] = quat_to_matrix(unit[k]);
                world[k] = match joint.parent {
                    None => local[k],
                    Some(p) => mat_mul(&world[p], &local[k]),
                };
                g_world[k] = zero3;
                g_pos[k] = [gp_row[3 * k], gp_row[3 * k + 1], gp_row[3 * k + 2]];
            }

            // Children come after parents, so a reverse sweep has complete
            // upstream gradients at each joint when it is visited.
            for k in (0..j).rev() {
                let joint = &skel.joints[k];
                let g_local = match joint.parent {
                    None => {
                        for a in 0..3 {
                            grow[a] = g_pos[k][a];
                        }
                        g_world[k]
                    }
                    Some(p) => {
                        let off = joint.offset.map(F::lit);
                        for a in 0..3 {
                            g_pos[p][a] = g_pos[p][a] + g_pos[k][a];
                            for b in 0..3 {
                                g_world[p][a][b] = g_world[p][a][b] + g_pos[k][a] * off[b];
                            }
                        }
                        // W_k = W_p R_k
                        let mut g_loc = zero3;
                        for a in 0..3 {
                            for b in 0..3 {
                                let mut acc_wp = F::zero();
                                let mut acc_r = F::zero();
                                for c in 0..3 {
                                    acc_wp = acc_wp + g_world[k][a][c] * local[k][b][c];
                                    acc_r = acc_r + world[p][c][a] * g_world[k][c][b];
                                }
                                g_world[p][a][b] = g_world[p][a][b] + acc_wp;
                                g_loc[a][b] = acc_r;
                            }
                        }
                        g_loc
                    }
                };

                let partials = quat_matrix_partials(unit[k]);
                let mut gu = [F::zero(); 4];
                for (c, d) in partials.iter().enumerate() {
                    let mut acc = F::zero();
                    for a in 0..3 {
                        for b in 0..3 {
                            acc = acc + g_local[a][b] * d[a][b];
                        }
                    }
                    gu[c] = acc;
                }
                let n = norms[k];
                if n < F::lit(1e-12) {
                    continue;
                }
                let u = unit[k];
                let dot = u[0] * gu[0] + u[1] * gu[1] + u[2] * gu[2] + u[3] * gu[3];
                for c in 0..4 {
                    grow[3 + 4 * k + c] = (gu[c] - u[c] * dot) / n;
                }
            }
        }
        vec![Tensor::new(x.shape().to_vec(), gx).expect("same shape as input")]
    }
}

/// Binary per-frame contact flags for each foot joint, `[frame][foot]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FootContactMask {
    pub mask: Vec<Vec<u8>>,
}

impl FootContactMask {
    pub fn duty_cycle(&self, foot: usize) -> f64 {
        let n = self.mask.len() as f64;
        self.mask.iter().map(|m| m[foot] as f64).sum::<f64>() / n
    }
}

/// A foot is in contact at frame `i` when it moves less than `vel_thresh`
/// metres to frame `i+1` and sits below `height_thresh`. The last frame
/// repeats the previous frame's flag.
pub fn foot_contact_mask(
    skeleton: &Skeleton,
    positions: &JointPositions,
    vel_thresh: f64,
    height_thresh: f64,
) -> Result<FootContactMask> {
    ensure!(
        vel_thresh > 0.0 && height_thresh > 0.0,
        "contact thresholds must be positive"
    );
    let n = positions.num_frames();
    ensure!(n > 0, "cannot compute contacts for an empty motion");
    let feet = skeleton.foot_joints();
    let mut mask = Vec::with_capacity(n);
    for i in 0..n {
        if i + 1 == n && n > 1 {
            let prev: Vec<u8> = mask.last().cloned().expect("n > 1");
            mask.push(prev);
            break;
        }
        let row = feet
            .iter()
            .map(|&f| {
                let p = positions.positions[i][f];
                let speed = if n > 1 {
                    let q = positions.positions[i + 1][f];
                    ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2)).sqrt()
                } else {
                    0.0
                };
                u8::from(speed < vel_thresh && p[1] < height_thresh)
            })
            .collect();
        mask.push(row);
    }
    Ok(FootContactMask { mask })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_pose_positions_sum_offsets() {
        let skel = Skeleton::desk();
        let motion = Motion::rest(&skel, 2, 20.0, [0.0; 3]);
        let pos = forward_kinematics(&skel, &motion).unwrap();
        for (k, joint) in skel.joints().iter().enumerate() {
            let mut expected = [0.0; 3];
            let mut cur = Some(k);
            while let Some(c) = cur {
                for a in 0..3 {
                    expected[a] += skel.joints()[c].offset[a];
                }
                cur = skel.joints()[c].parent;
            }
            for a in 0..3 {
                assert!(
                    (pos.positions[1][k][a] - expected[a]).abs() < 1e-12,
                    "{}",
                    joint.name
                );
            }
        }
    }

    #[test]
    fn root_yaw_quarter_turn() {
        let joints = vec![
            Joint {
                name: "root".into(),
                parent: None,
                offset: [0.0; 3],
            },
            Joint {
                name: "child".into(),
                parent: Some(0),
                offset: [1.0, 0.0, 0.0],
            },
        ];
        let part_map = PartLabel::ALL.iter().map(|p| (*p, vec![1])).collect();
        let skel = Skeleton::new(joints, vec![1], part_map).unwrap();
        let q = quat_from_axis_angle(&[0.0, 1.0, 0.0], std::f64::consts::FRAC_PI_2);
        let motion = Motion::new(20.0, vec![[0.0; 3]], vec![vec![q, IDENTITY]]).unwrap();
        let p = forward_kinematics(&skel, &motion).unwrap().positions[0][1];
        assert!(
            p[0].abs() < 1e-12 && p[1].abs() < 1e-12 && (p[2] + 1.0).abs() < 1e-12,
            "{p:?}"
        );
    }

    #[test]
    fn joint_count_mismatch_is_error() {
        let skel = Skeleton::desk();
        let motion = Motion::new(20.0, vec![[0.0; 3]], vec![vec![IDENTITY; 3]]).unwrap();
        assert!(forward_kinematics(&skel, &motion).is_err());
    }

    #[test]
    fn skeleton_rejects_parent_after_child() {
        let joints = vec![
            Joint {
                name: "root".into(),
                parent: None,
                offset: [0.0; 3],
            },
            Joint {
                name: "a".into(),
                parent: Some(2),
                offset: [0.0; 3],
            },
            Joint {
                name: "b".into(),
                parent: Some(0),
                offset: [0.0; 3],
            },
        ];
        let part_map = PartLabel::ALL.iter().map(|p| (*p, vec![1, 2])).collect();
        assert!(Skeleton::new(joints, vec![], part_map).is_err());
    }

    #[test]
    fn motion_rejects_non_unit_quaternion() {
        let err = Motion::new(20.0, vec![[0.0; 3]], vec![vec![[1.01, 0.0, 0.0, 0.0]]]);
        assert!(matches!(err, Err(Error::Validation { .. })));
    }

    #[test]
    fn contact_stationary_and_moving() {
        let skel = Skeleton::desk();
        let still = Motion::rest(&skel, 5, 20.0, [0.0, Skeleton::DESK_ROOT_HEIGHT, 0.0]);
        let pos = forward_kinematics(&skel, &still).unwrap();
        let m = foot_contact_mask(&skel, &pos, 0.01, 0.05).unwrap();
        assert!(m.mask.iter().flatten().all(|&v| v == 1));

        let moving = Motion {
            root_translation: (0..5).map(|i| [i as f64, 1.0 + 0.9, 0.0]).collect(),
            ..still
        };
        let pos = forward_kinematics(&skel, &moving).unwrap();
        let m = foot_contact_mask(&skel, &pos, 0.01, 0.05).unwrap();
        assert!(m.mask.iter().flatten().all(|&v| v == 0));
    }

    #[test]
    fn contact_thresholds_must_be_positive() {
        let skel = Skeleton::desk();
        let pos = JointPositions {
            positions: vec![vec![[0.0; 3]; 17]],
        };
        assert!(foot_contact_mask(&skel, &pos, 0.0, 0.05).is_err());
        let empty = JointPositions { positions: vec![] };
        assert!(foot_contact_mask(&skel, &empty, 0.01, 0.05).is_err());
    }
}
