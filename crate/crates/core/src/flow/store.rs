use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use super::{read_flo, FlowField, FlowProvenance};
use crate::autograd::SamplingPlan;
use crate::error::{Error, Result};
use crate::video::FrameSequence;

/// Source of optical flow between two frames of a sequence.
///
/// `flow(frames, target, source)` returns the field living on frame
/// `target` that points into frame `source` (0-based indices), i.e. the
/// field that backward-warps `frames[source]` to time `target`.
pub trait FlowProvider: Send + Sync {
    fn flow(&self, frames: &FrameSequence, target: usize, source: usize) -> Result<FlowField>;
}

/// Every pair is related by zero motion. Useful for static scenes.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroFlow;

impl FlowProvider for ZeroFlow {
    fn flow(&self, frames: &FrameSequence, target: usize, source: usize) -> Result<FlowField> {
        let (h, w) = frames.dims();
        Ok(FlowField::zeros(h, w, target, source))
    }
}

/// `flow_0003_0004.flo`: field on frame 3 pointing into frame 4 (1-based).
pub fn flow_file_name(target: usize, source: usize) -> String {
    format!("flow_{:04}_{:04}.flo", target + 1, source + 1)
}

/// Composes `a→b` with `b→c` into `a→c`:
/// `f_ac(x) = f_ab(x) + f_bc(x + f_ab(x))`, sampled bilinearly.
pub fn compose(ab: &FlowField, bc: &FlowField) -> Result<FlowField> {
    if ab.dims() != bc.dims() {
        return Err(Error::DimensionMismatch(
            "composed flows differ in size".into(),
        ));
    }
    if ab.source != bc.target {
        return Err(Error::Invalid(format!(
            "cannot chain flow {}→{} with {}→{}",
            ab.target + 1,
            ab.source + 1,
            bc.target + 1,
            bc.source + 1
        )));
    }
    let (h, w) = ab.dims();
    let mut dx = Vec::with_capacity(h * w);
    let mut dy = Vec::with_capacity(h * w);
    for y in 0..h {
        for x in 0..w {
            let (u, v) = ab.at(y, x);
            let taps = SamplingPlan::bilinear_taps(x as f64 + u, y as f64 + v, w, h);
            let (mut su, mut sv) = (0.0, 0.0);
            for (i, wt) in taps {
                su += wt * f64::from(bc.dx()[i as usize]);
                sv += wt * f64::from(bc.dy()[i as usize]);
            }
            dx.push((u + su) as f32);
            dy.push((v + sv) as f32);
        }
    }
    let provenance = if ab.provenance == FlowProvenance::GroundTruth
        && bc.provenance == FlowProvenance::GroundTruth
    {
        FlowProvenance::GroundTruth
    } else {
        FlowProvenance::Estimated
    };
    FlowField::new(h, w, dx, dy, ab.target, bc.source, provenance)
}

/// Precomputed flows stored as `.flo` files named by [`flow_file_name`].
///
/// When a requested pair is missing and chaining is enabled, the field is
/// composed from stored adjacent-frame flows.
pub struct FlowDirectory {
    dir: PathBuf,
    provenance: FlowProvenance,
    chain_adjacent: bool,
    cache: RwLock<HashMap<(usize, usize), Arc<FlowField>>>,
}

impl FlowDirectory {
    pub fn new(dir: impl Into<PathBuf>, provenance: FlowProvenance) -> Self {
        Self {
            dir: dir.into(),
            provenance,
            chain_adjacent: true,
            cache: RwLock::new(HashMap::new()),
        }
    }

    pub fn without_chaining(mut self) -> Self {
        self.chain_adjacent = false;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn stored(&self, target: usize, source: usize) -> Result<Option<Arc<FlowField>>> {
        if let Some(f) = self
            .cache
            .read()
            .expect("flow cache poisoned")
            .get(&(target, source))
        {
            return Ok(Some(Arc::clone(f)));
        }
        let path = self.dir.join(flow_file_name(target, source));
        if !path.exists() {
            return Ok(None);
        }
        let field = Arc::new(read_flo(&path, target, source, self.provenance)?);
        self.cache
            .write()
            .expect("flow cache poisoned")
            .insert((target, source), Arc::clone(&field));
        Ok(Some(field))
    }
}

impl FlowProvider for FlowDirectory {
    fn flow(&self, frames: &FrameSequence, target: usize, source: usize) -> Result<FlowField> {
        let missing = Error::MissingFlow {
            target: target + 1,
            source_frame: source + 1,
        };
        if target == source {
            let (h, w) = frames.dims();
            return Ok(FlowField::zeros(h, w, target, source));
        }
        let check = |f: &FlowField| -> Result<()> {
            if f.dims() != frames.dims() {
                return Err(Error::DimensionMismatch(format!(
                    "stored flow {} is {}×{}, frames are {}×{}",
                    flow_file_name(target, source),
                    f.height(),
                    f.width(),
                    frames.dims().0,
                    frames.dims().1
                )));
            }
            Ok(())
        };
        if let Some(f) = self.stored(target, source)? {
            check(&f)?;
            return Ok((*f).clone());
        }
        if !self.chain_adjacent || target.abs_diff(source) < 2 {
            return Err(missing);
        }
        let step = |t: usize| if source > target { t + 1 } else { t - 1 };
        let mut current = target;
        let mut acc: Option<FlowField> = None;
        while current != source {
            let next = step(current);
            let Some(hop) = self.stored(current, next)? else {
                return Err(missing);
            };
            check(&hop)?;
            acc = Some(match acc {
                None => (*hop).clone(),
                Some(prev) => compose(&prev, &hop)?,
            });
            current = next;
        }
        Ok(acc.expect("at least one hop"))
    }
}

impl<T: FlowProvider + ?Sized> FlowProvider for Arc<T> {
    fn flow(&self, frames: &FrameSequence, target: usize, source: usize) -> Result<FlowField> {
        (**self).flow(frames, target, source)
    }
}
