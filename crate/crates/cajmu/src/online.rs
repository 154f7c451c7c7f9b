//! Online tracking session: first-frame initialization (augmentation,
//! meta-adaptation, filter training) and the per-frame loop that localizes,
//! refines the box, and keeps the sample buffer, affinity vectors, and
//! localization filter up to date.

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::meta::{online_init, MetaConfig};
use crate::tensor::{Graph, ParamSet, TensorData};
use crate::tracker::{
    augment_initial, extract_features_data, init_filter, localize, optimize_filter, refine_box,
    BBox, TrackerConfig,
};
use crate::updater::{
    adapt_localization, localization_context, make_affinity, regression_context, BnMode,
    SampleBuffer,
};

pub const BUFFER_CAPACITY: usize = 50;
/// A new sample is buffered when its peak score clears this fraction of the
/// largest peak score seen so far in the session.
pub const CONFIDENCE_RATIO: f64 = 0.25;

/// Which parts of the joint updater a session applies. `Identity` is the
/// no-updater baseline; `Full` additionally runs the meta-learned
/// first-frame adaptation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Identity,
    ClsOnly,
    RegOnly,
    Joint,
    Full,
}

impl Variant {
    pub fn all() -> [Variant; 5] {
        [
            Variant::Identity,
            Variant::ClsOnly,
            Variant::RegOnly,
            Variant::Joint,
            Variant::Full,
        ]
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Identity => "identity",
            Variant::ClsOnly => "cls-only",
            Variant::RegOnly => "reg-only",
            Variant::Joint => "joint",
            Variant::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Result<Variant> {
        match s {
            "identity" => Ok(Variant::Identity),
            "cls-only" => Ok(Variant::ClsOnly),
            "reg-only" => Ok(Variant::RegOnly),
            "joint" => Ok(Variant::Joint),
            "full" => Ok(Variant::Full),
            other => Err(Error::invalid(format!("unknown variant '{other}'"))),
        }
    }

    fn adapts_loc(self) -> bool {
        matches!(self, Variant::ClsOnly | Variant::Joint | Variant::Full)
    }

    fn adapts_reg(self) -> bool {
        matches!(self, Variant::RegOnly | Variant::Joint | Variant::Full)
    }

    fn meta_adapted(self) -> bool {
        matches!(self, Variant::Full)
    }
}

/// Per-frame tracking output.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub bbox: BBox,
    pub confidence: f64,
    pub buffer_updated: bool,
    pub fallback: bool,
}

pub struct TrackerSession {
    params: ParamSet,
    tcfg: TrackerConfig,
    variant: Variant,
    buffer: SampleBuffer,
    filter: TensorData,
    a_loc: TensorData,
    a_reg0: TensorData,
    a_reg1: TensorData,
    base_m0: TensorData,
    base_m1: TensorData,
    m0: TensorData,
    m1: TensorData,
    prev_box: BBox,
    frame_size: (f64, f64),
    max_score: f64,
    rng: ChaCha8Rng,
}

fn ones(n: usize) -> TensorData {
    TensorData::new(vec![n], vec![1.0; n]).unwrap()
}

impl TrackerSession {
    /// Initialize on the first frame: augment, optionally meta-adapt the
    /// affinity heads, fill the sample buffer, derive affinity vectors and
    /// the adapted modulation, and train the localization filter.
    pub fn init(
        params: &ParamSet,
        frame: &TensorData,
        box_: &BBox,
        variant: Variant,
        tcfg: &TrackerConfig,
        mcfg: &MetaConfig,
        seed: u64,
    ) -> Result<Self> {
        let params = if variant.meta_adapted() {
            online_init(params, frame, box_, tcfg, mcfg, seed)?.0
        } else {
            params.clone()
        };
        if frame.shape.len() != 3 {
            return Err(Error::shape(format!("frame must be [3,H,W], got {:?}", frame.shape)));
        }
        let frame_size = (frame.shape[2] as f64, frame.shape[1] as f64);

        let augmented = augment_initial(frame, box_, tcfg.augment_count, seed)?;
        let mut buffer = SampleBuffer::new(BUFFER_CAPACITY);
        let mut reg2_first = None;
        for (f, b) in &augmented {
            let (cls, reg2) = extract_features_data(&params, f, tcfg)?;
            if reg2_first.is_none() {
                reg2_first = Some(reg2);
            }
            buffer.insert(Rc::new(cls), *b, 1.0, 0.0);
        }
        let reg2_first = reg2_first.unwrap();

        let mut session = TrackerSession {
            params,
            tcfg: tcfg.clone(),
            variant,
            buffer,
            filter: TensorData::zeros(vec![tcfg.c_cls, 3, 3]),
            a_loc: ones(tcfg.c_cls),
            a_reg0: ones(tcfg.c_mod),
            a_reg1: ones(tcfg.c_mod),
            base_m0: ones(tcfg.c_mod),
            base_m1: ones(tcfg.c_mod),
            m0: ones(tcfg.c_mod),
            m1: ones(tcfg.c_mod),
            prev_box: *box_,
            frame_size,
            max_score: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x6f6e_6c69_6e65_5f74),
        };
        session.recompute_affinity()?;

        // Modulation is anchored to the (un-augmented) first-frame target.
        let (m0, m1) = {
            let g = Graph::new();
            let bound = g.bind_frozen(&session.params);
            let cls = g.constant(&session.buffer.entries()[0].feature);
            let reg2 = g.constant(&reg2_first);
            let (m0, m1) =
                crate::tracker::extract_modulation(&bound, &cls, &reg2, box_, tcfg)?;
            (m0.data(), m1.data())
        };
        session.base_m0 = m0;
        session.base_m1 = m1;
        session.readapt_modulation();

        let samples: Vec<(&TensorData, BBox)> = session
            .buffer
            .entries()
            .iter()
            .map(|e| (e.feature.as_ref(), e.bbox))
            .collect();
        let (filter, _) = init_filter(
            &samples,
            tcfg.init_filter_steps,
            tcfg.init_filter_lr,
            &session.a_loc,
            tcfg,
        )?;
        session.filter = filter;

        let ((_, _), peak) = localize(&session.score_map(&session.buffer.entries()[0].feature)?)?;
        session.max_score = peak.max(0.0);
        Ok(session)
    }

    /// Affinity vectors from the current buffer contents; variants that do
    /// not adapt a branch keep that branch's vector at exactly 1.
    fn recompute_affinity(&mut self) -> Result<()> {
        if !self.variant.adapts_loc() && !self.variant.adapts_reg() {
            return Ok(());
        }
        let g = Graph::new();
        let bound = g.bind_frozen(&self.params);
        let samples: Vec<_> = self
            .buffer
            .entries()
            .iter()
            .map(|e| (g.constant(&e.feature), e.bbox))
            .collect();
        let (per_sample, pooled_l, _) =
            localization_context(&bound, &samples, &self.tcfg, BnMode::Eval)?;
        let boxes: Vec<BBox> = self.buffer.entries().iter().map(|e| e.bbox).collect();
        let pooled_r = regression_context(&bound, &per_sample, &boxes, &self.tcfg)?;
        let affinity = make_affinity(&bound, &pooled_l, &pooled_r)?;
        if self.variant.adapts_loc() {
            self.a_loc = affinity.a_loc.data();
        }
        if self.variant.adapts_reg() {
            self.a_reg0 = affinity.a_reg0.data();
            self.a_reg1 = affinity.a_reg1.data();
        }
        Ok(())
    }

    fn readapt_modulation(&mut self) {
        let scale = |base: &TensorData, a: &TensorData| {
            let values = base.values.iter().zip(&a.values).map(|(m, s)| m * s).collect();
            TensorData::new(base.shape.clone(), values).unwrap()
        };
        self.m0 = scale(&self.base_m0, &self.a_reg0);
        self.m1 = scale(&self.base_m1, &self.a_reg1);
    }

    /// Affinity-adapted score map for a classification feature map.
    pub fn score_map(&self, cls_feat: &TensorData) -> Result<TensorData> {
        let g = Graph::new();
        let feat = g.constant(cls_feat);
        let a = g.constant(&self.a_loc);
        let filt = g.constant(&self.filter);
        Ok(adapt_localization(&feat, &a, &filt)?.data())
    }

    /// Predicted IoU of a box on the given frame features, under the
    /// session's adapted modulation.
    pub fn predict_iou(
        &self,
        cls_feat: &TensorData,
        reg2_feat: &TensorData,
        box_: &BBox,
    ) -> Result<f64> {
        let corners = [box_.x0(), box_.y0(), box_.x1(), box_.y1()];
        let (value, _) = crate::tracker::iou_value_and_grads(
            &self.params,
            cls_feat,
            reg2_feat,
            &self.m0,
            &self.m1,
            corners,
            &self.tcfg,
        )?;
        Ok(value)
    }

    /// Track one frame: localize, refine the box, and fold the frame into
    /// the buffer / affinity / filter when confident enough.
    pub fn track(&mut self, frame: &TensorData) -> Result<FrameResult> {
        let (cls, reg2) = extract_features_data(&self.params, frame, &self.tcfg)?;
        let score = self.score_map(&cls)?;
        let (cell, raw_peak) = localize(&score)?;
        let confidence = raw_peak.max(0.0);
        let (refined, fallback) = refine_box(
            &self.params,
            &cls,
            &reg2,
            &self.m0,
            &self.m1,
            cell,
            &self.prev_box,
            self.frame_size,
            &self.tcfg,
            &mut self.rng,
        )?;
        // Ascent can nudge corners past the frame edge; buffered boxes must
        // stay poolable, so the reported box is clamped.
        let bbox = refined.clamp_inside(self.frame_size.0, self.frame_size.1);

        self.max_score = self.max_score.max(confidence);
        let threshold = CONFIDENCE_RATIO * self.max_score;
        let buffer_updated = self
            .buffer
            .insert(Rc::new(cls), bbox, confidence, threshold);
        if buffer_updated {
            self.recompute_affinity()?;
            self.readapt_modulation();
            let samples: Vec<(&TensorData, BBox)> = self
                .buffer
                .entries()
                .iter()
                .map(|e| (e.feature.as_ref(), e.bbox))
                .collect();
            let confidences: Vec<f64> = self
                .buffer
                .entries()
                .iter()
                .map(|e| e.confidence)
                .collect();
            let (filter, _) = optimize_filter(
                &samples,
                &confidences,
                &self.filter,
                self.tcfg.online_filter_steps,
                self.tcfg.online_filter_lr,
                &self.a_loc,
                &self.tcfg,
            )?;
            self.filter = filter;
        }

        self.prev_box = bbox;
        Ok(FrameResult {
            bbox,
            confidence,
            buffer_updated,
            fallback,
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn current_box(&self) -> BBox {
        self.prev_box
    }

    pub fn buffer(&self) -> &SampleBuffer {
        &self.buffer
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn filter(&self) -> &TensorData {
        &self.filter
    }

    pub fn affinity(&self) -> (&TensorData, &TensorData, &TensorData) {
        (&self.a_loc, &self.a_reg0, &self.a_reg1)
    }
}
