//! Dataset file layout:
//!
//! ```text
//! CUGRO-DS v1\n
//! key=value\n ...          (task_id, family, params, horizon, quality, gamma,
//!                           state_dim, action_dim, trajectories, transitions,
//!                           columns, lengths, stats_count, blob_values)
//! end\n
//! <blob_values little-endian f64>
//! ```
//!
//! The blob holds one row per transition in trajectory order with columns
//! `s[4], a[2], r, s_next[4], done, rtg`, followed by the state mean and
//! variance (4 values each).

use std::fs;
use std::path::Path;

use crate::dataset::{NormStats, OfflineDataset};
use crate::envs::{Quality, TaskKind, TaskSpec, Trajectory, Transition, ACTION_DIM, STATE_DIM};
use crate::error::{Error, Result};
use crate::numerics::checkpoint::{decode_f64s, encode_f64s, write_atomic, Manifest};

pub const MAGIC: &str = "CUGRO-DS v1";
const ROW: usize = 2 * STATE_DIM + ACTION_DIM + 3;
const COLUMNS: &str = "s0,s1,s2,s3,a0,a1,r,sn0,sn1,sn2,sn3,done,rtg";

pub fn save(dataset: &OfflineDataset, path: &Path) -> Result<()> {
    let n = dataset.num_transitions();
    let mut m = Manifest::new();
    let task = dataset.task();
    m.push("task_id", task.task_id)
        .push("family", task.kind.family_name())
        .push_f64s("params", &task.kind.params())
        .push("horizon", task.horizon)
        .push("quality", dataset.quality())
        .push_f64("gamma", dataset.gamma())
        .push("state_dim", STATE_DIM)
        .push("action_dim", ACTION_DIM)
        .push("trajectories", dataset.trajectories().len())
        .push("transitions", n)
        .push("columns", COLUMNS)
        .push(
            "lengths",
            dataset
                .trajectories()
                .iter()
                .map(|t| t.len().to_string())
                .collect::<Vec<_>>()
                .join(","),
        )
        .push("stats_count", dataset.stats().count)
        .push("blob_values", n * ROW + 2 * STATE_DIM);

    let mut values = Vec::with_capacity(n * ROW + 2 * STATE_DIM);
    for (traj, rtg) in dataset.trajectories().iter().zip(dataset.returns_to_go()) {
        for (t, g) in traj.transitions.iter().zip(rtg) {
            values.extend_from_slice(&t.s);
            values.extend_from_slice(&t.a);
            values.push(t.r);
            values.extend_from_slice(&t.s_next);
            values.push(if t.done { 1.0 } else { 0.0 });
            values.push(*g);
        }
    }
    values.extend_from_slice(&dataset.stats().mean);
    values.extend_from_slice(&dataset.stats().var);

    let mut bytes = format!("{MAGIC}\n{}end\n", m.render()).into_bytes();
    bytes.extend_from_slice(&encode_f64s(&values));
    write_atomic(path, &bytes)
}

pub fn load(path: &Path) -> Result<OfflineDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes, path)
}

fn next_line<'a>(bytes: &'a [u8], pos: &mut usize, path: &Path) -> Result<&'a str> {
    let start = *pos;
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .map(|i| start + i)
        .ok_or_else(|| Error::format(path, start as u64, "header ended before 'end' line"))?;
    *pos = end + 1;
    std::str::from_utf8(&bytes[start..end]).map_err(|_| Error::format(path, start as u64, "header line is not UTF-8"))
}

fn parse(bytes: &[u8], path: &Path) -> Result<OfflineDataset> {
    let mut pos = 0usize;
    let magic_end = bytes.iter().position(|&b| b == b'\n').unwrap_or(bytes.len());
    let found = String::from_utf8_lossy(&bytes[..magic_end.min(32)]);
    if found != MAGIC {
        return Err(Error::format(
            path,
            0,
            format!("bad magic: expected '{MAGIC}', found '{found}'"),
        ));
    }
    next_line(bytes, &mut pos, path)?;

    let header_start = pos;
    let mut header = String::new();
    loop {
        let line_start = pos;
        let line = next_line(bytes, &mut pos, path)?;
        if line == "end" {
            break;
        }
        if !line.contains('=') {
            return Err(Error::format(
                path,
                line_start as u64,
                format!("malformed header line '{line}'"),
            ));
        }
        header.push_str(line);
        header.push('\n');
    }
    let m = Manifest::parse_text(&header, Some(path.to_path_buf()))?;
    let bad = |msg: String| Error::format(path, header_start as u64, msg);
    let hdr = |e: Error| bad(e.to_string());

    let task_id: u32 = m.parse("task_id").map_err(hdr)?;
    let family = m.get("family").map_err(hdr)?.to_string();
    let params: Vec<f64> = m.parse_list("params").map_err(hdr)?;
    let horizon: usize = m.parse("horizon").map_err(hdr)?;
    let quality: Quality = m.get("quality").map_err(hdr)?.parse().map_err(hdr)?;
    let gamma: f64 = m.parse("gamma").map_err(hdr)?;
    let state_dim: usize = m.parse("state_dim").map_err(hdr)?;
    let action_dim: usize = m.parse("action_dim").map_err(hdr)?;
    let n_traj: usize = m.parse("trajectories").map_err(hdr)?;
    let n: usize = m.parse("transitions").map_err(hdr)?;
    let lengths: Vec<usize> = m.parse_list("lengths").map_err(hdr)?;
    let stats_count: u64 = m.parse("stats_count").map_err(hdr)?;
    let blob_values: usize = m.parse("blob_values").map_err(hdr)?;

    if state_dim != STATE_DIM || action_dim != ACTION_DIM {
        return Err(bad(format!("unsupported dims state={state_dim} action={action_dim}")));
    }
    if m.get("columns").map_err(hdr)? != COLUMNS {
        return Err(bad("unexpected column layout".into()));
    }
    if lengths.len() != n_traj || lengths.iter().sum::<usize>() != n {
        return Err(bad(format!(
            "lengths table ({} entries, {} transitions) disagrees with trajectories={n_traj}, transitions={n}",
            lengths.len(),
            lengths.iter().sum::<usize>()
        )));
    }
    if blob_values != n * ROW + 2 * STATE_DIM {
        return Err(bad(format!("blob_values={blob_values} does not match {n} transitions")));
    }

    let blob = &bytes[pos..];
    if blob.len() != blob_values * 8 {
        let offset = pos + blob.len().min(blob_values * 8);
        return Err(Error::format(
            path,
            offset as u64,
            format!("blob holds {} bytes, header requires {}", blob.len(), blob_values * 8),
        ));
    }
    let values = decode_f64s(blob, path, pos as u64)?;

    let kind = TaskKind::from_parts(&family, &params).map_err(hdr)?;
    let task = TaskSpec::new(task_id, kind, horizon).map_err(hdr)?;

    let mut trajectories = Vec::with_capacity(n_traj);
    let mut rtg = Vec::with_capacity(n_traj);
    let mut rows = values.chunks_exact(ROW);
    for &len in &lengths {
        let mut transitions = Vec::with_capacity(len);
        let mut g = Vec::with_capacity(len);
        for row in rows.by_ref().take(len) {
            let mut s = [0.0; STATE_DIM];
            let mut a = [0.0; ACTION_DIM];
            let mut s_next = [0.0; STATE_DIM];
            s.copy_from_slice(&row[0..4]);
            a.copy_from_slice(&row[4..6]);
            s_next.copy_from_slice(&row[7..11]);
            transitions.push(Transition {
                s,
                a,
                r: row[6],
                s_next,
                done: row[11] != 0.0,
            });
            g.push(row[12]);
        }
        let traj = Trajectory { transitions };
        traj.check_chain().map_err(|e| bad(e.to_string()))?;
        trajectories.push(traj);
        rtg.push(g);
    }
    let tail = &values[n * ROW..];
    let stats = NormStats {
        count: stats_count,
        mean: tail[..STATE_DIM].to_vec(),
        var: tail[STATE_DIM..].to_vec(),
    };
    Ok(OfflineDataset::from_parts(
        task,
        quality,
        gamma,
        trajectories,
        rtg,
        stats,
    ))
}
