//! Consecutive-frame SSIM and MSE, and the consistency report.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Side of the square, non-overlapping SSIM window.
pub const WINDOW: usize = 8;
/// Dynamic range of `[-1, 1]` data.
pub const VALUE_RANGE: f64 = 2.0;
pub const REPORT_SCHEMA: &str = "hvdpo.consistency/1";

/// Windowed SSIM between two images of shape `[C, H, W]` or `[H, W]`.
///
/// Windows are 8×8 with stride 8 and uniform weights; a partial border is
/// ignored. Statistics use population (1/n) moments. The score is the mean
/// over windows, averaged over channels.
pub fn ssim<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>, value_range: f64) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "ssim",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    if !(value_range > 0.0) {
        return Err(Error::invalid(format!("value range must be positive, got {value_range}")));
    }
    let (c, h, w) = match *a.shape() {
        [h, w] => (1, h, w),
        [c, h, w] => (c, h, w),
        _ => {
            return Err(Error::domain(
                "ssim",
                format!("expected [C, H, W] or [H, W], got {:?}", a.shape()),
            ))
        }
    };
    if h < WINDOW || w < WINDOW {
        return Err(Error::domain(
            "ssim",
            format!("image {h}x{w} is smaller than one {WINDOW}x{WINDOW} window"),
        ));
    }
    let c1 = (0.01 * value_range).powi(2);
    let c2 = (0.03 * value_range).powi(2);
    let n = (WINDOW * WINDOW) as f64;
    let (ad, bd) = (a.data(), b.data());

    let mut channel_sum = 0.0;
    for ch in 0..c {
        let mut win_sum = 0.0;
        let mut windows = 0;
        for y0 in (0..=h - WINDOW).step_by(WINDOW) {
            for x0 in (0..=w - WINDOW).step_by(WINDOW) {
                let (mut sa, mut sb) = (0.0, 0.0);
                for y in y0..y0 + WINDOW {
                    for x in x0..x0 + WINDOW {
                        let i = (ch * h + y) * w + x;
                        sa += ad[i].as_f64();
                        sb += bd[i].as_f64();
                    }
                }
                let (ma, mb) = (sa / n, sb / n);
                let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
                for y in y0..y0 + WINDOW {
                    for x in x0..x0 + WINDOW {
                        let i = (ch * h + y) * w + x;
                        let (da, db) = (ad[i].as_f64() - ma, bd[i].as_f64() - mb);
                        vaa += da * da;
                        vbb += db * db;
                        vab += da * db;
                    }
                }
                let (vaa, vbb, vab) = (vaa / n, vbb / n, vab / n);
                let num = (2.0 * ma * mb + c1) * (2.0 * vab + c2);
                let den = (ma * ma + mb * mb + c1) * (vaa + vbb + c2);
                win_sum += num / den;
                windows += 1;
            }
        }
        channel_sum += win_sum / windows as f64;
    }
    Ok(channel_sum / c as f64)
}

fn check_video<F: Scalar>(video: &Tensor<F>, op: &'static str) -> Result<usize> {
    if video.rank() != 4 {
        return Err(Error::domain(op, format!("expected [F, C, H, W], got {:?}", video.shape())));
    }
    let f = video.shape()[0];
    if f < 2 {
        return Err(Error::domain(op, format!("need at least 2 frames, got {f}")));
    }
    Ok(f)
}

/// Mean over consecutive frame pairs of the mean squared difference.
pub fn mse_consecutive<F: Scalar>(video: &Tensor<F>) -> Result<f64> {
    let f = check_video(video, "mse_consecutive")?;
    let per = video.numel() / f;
    let d = video.data();
    let mut total = 0.0;
    for i in 0..f - 1 {
        let (x, y) = (&d[i * per..(i + 1) * per], &d[(i + 1) * per..(i + 2) * per]);
        let s: f64 = x
            .iter()
            .zip(y)
            .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum();
        total += s / per as f64;
    }
    Ok(total / (f - 1) as f64)
}

/// Mean over consecutive frame pairs of [`ssim`] with L = 2.
pub fn ssim_consecutive<F: Scalar>(video: &Tensor<F>) -> Result<f64> {
    let f = check_video(video, "ssim_consecutive")?;
    let mut total = 0.0;
    for i in 0..f - 1 {
        let a = video.narrow(0, i, 1)?;
        let b = video.narrow(0, i + 1, 1)?;
        let s = &a.shape()[1..];
        total += ssim(&a.reshape(s)?, &b.reshape(s)?, VALUE_RANGE)?;
    }
    Ok(total / (f - 1) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoScore {
    pub id: String,
    pub condition: usize,
    pub ssim: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub count: usize,
    pub mean_ssim: f64,
    pub mean_mse: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReportMeta {
    /// Hex SHA-256 of the checkpoint the videos came from, if any.
    pub checkpoint_digest: Option<String>,
    pub seeds: Vec<u64>,
}

/// SSIM is raw (not ×100) in [−1, 1]; MSE is raw on `[-1, 1]` data.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub schema: &'static str,
    pub meta: ReportMeta,
    pub videos: Vec<VideoScore>,
    /// Keyed by condition id, ascending.
    pub per_condition: Vec<(usize, Aggregate)>,
    pub overall: Aggregate,
}

fn aggregate<'a>(scores: impl Iterator<Item = &'a VideoScore>) -> Aggregate {
    let (mut n, mut s, mut m) = (0, 0.0, 0.0);
    for v in scores {
        n += 1;
        s += v.ssim;
        m += v.mse;
    }
    Aggregate {
        count: n,
        mean_ssim: s / n as f64,
        mean_mse: m / n as f64,
    }
}

/// `videos` holds (id, condition, video). Output order is by id, so the
/// report does not depend on input order.
pub fn build_report<F: Scalar>(
    videos: &[(String, usize, &Tensor<F>)],
    meta: ReportMeta,
) -> Result<ConsistencyReport> {
    if videos.is_empty() {
        return Err(Error::invalid("cannot build a report from zero videos"));
    }
    let mut scores = videos
        .iter()
        .map(|(id, cond, v)| {
            Ok(VideoScore {
                id: id.clone(),
                condition: *cond,
                ssim: ssim_consecutive(v)?,
                mse: mse_consecutive(v)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| a.id.cmp(&b.id).then(a.condition.cmp(&b.condition)));
    let mut conds: Vec<usize> = scores.iter().map(|s| s.condition).collect();
    conds.sort_unstable();
    conds.dedup();
    let per_condition = conds
        .into_iter()
        .map(|c| (c, aggregate(scores.iter().filter(|s| s.condition == c))))
        .collect();
    let overall = aggregate(scores.iter());
    Ok(ConsistencyReport {
        schema: REPORT_SCHEMA,
        meta,
        videos: scores,
        per_condition,
        overall,
    })
}

impl ConsistencyReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("id\tcondition\tssim\tmse\n");
        for v in &self.videos {
            let _ = writeln!(s, "{}\t{}\t{:.6}\t{:.6}", v.id, v.condition, v.ssim, v.mse);
        }
        for (c, a) in &self.per_condition {
            let _ = writeln!(s, "mean(condition={c})\t{c}\t{:.6}\t{:.6}", a.mean_ssim, a.mean_mse);
        }
        let o = &self.overall;
        let _ = writeln!(s, "mean(all)\t-\t{:.6}\t{:.6}", o.mean_ssim, o.mean_mse);
        s
    }
}
