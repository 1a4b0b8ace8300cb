//! First-frame-conditioned sampling and DDIM inversion of whole videos.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::stages::gaussian;
use crate::denoiser::Denoiser;
use crate::diffusion::{ddim_invert, ddim_sample, FrameMask, NoiseSchedule};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frame 0 is `first_frame` (`[C, H, W]`), the rest seeded Gaussian noise;
/// `steps` strided DDIM steps denoise the rest while frame 0 stays clean.
pub fn run_inference(
    model: &Denoiser<f32>,
    schedule: &NoiseSchedule,
    first_frame: &Tensor<f32>,
    cond: usize,
    steps: usize,
    seed: u64,
) -> Result<Tensor<f32>> {
    let cfg = model.config();
    let frame = [cfg.channels, cfg.height, cfg.width];
    let ok = first_frame.shape() == frame || first_frame.shape() == [1, frame[0], frame[1], frame[2]];
    if !ok {
        return Err(Error::invalid(format!(
            "first frame has shape {:?}, expected {:?}",
            first_frame.shape(),
            frame
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = gaussian(&mut rng, &cfg.video_shape());
    let per = first_frame.numel();
    x.data_mut()[..per].copy_from_slice(first_frame.data());
    let mut ts = schedule.strided(steps)?;
    ts.reverse();
    ddim_sample(model, &x, cond, &ts, schedule, &FrameMask::first_frame(cfg.frames))
}

/// DDIM-invert `video` over `steps` strided steps to a latent at t = T,
/// with `refine` fixed-point passes per step.
pub fn invert_video(
    model: &Denoiser<f32>,
    schedule: &NoiseSchedule,
    video: &Tensor<f32>,
    cond: usize,
    steps: usize,
    refine: usize,
) -> Result<Tensor<f32>> {
    let ts = schedule.strided(steps)?;
    let mask = FrameMask::first_frame(model.config().frames);
    ddim_invert(model, video, cond, &ts, schedule, &mask, refine)
}

/// Sample a video back from a latent at t = T.
pub fn sample_from_latent(
    model: &Denoiser<f32>,
    schedule: &NoiseSchedule,
    latent: &Tensor<f32>,
    cond: usize,
    steps: usize,
) -> Result<Tensor<f32>> {
    let mut ts = schedule.strided(steps)?;
    ts.reverse();
    ddim_sample(model, latent, cond, &ts, schedule, &FrameMask::first_frame(model.config().frames))
}
