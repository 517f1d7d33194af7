#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use opiaid_core::cadr::{fit_cadr, CadrConfig, CadrModel, EndpointSpec};
use opiaid_core::domain::{DoseGrid, EncounterRecord, OradeWeights, PainTimepoint};
use opiaid_core::experiment::endpoint_kind;
use opiaid_core::synthgen::{generate_cohort, Cohort, ScmGroundTruth};
use opiaid_core::validation::{select, split, SplitSpec};
use opiaid_learners::{Family, Hyper, LearnerKind};

pub fn cadr_config(gt: &ScmGroundTruth, kind: LearnerKind, hyper: Hyper) -> CadrConfig {
    CadrConfig {
        pain: EndpointSpec {
            kind,
            hyper: hyper.clone(),
        },
        orade: EndpointSpec { kind, hyper },
        grid: DoseGrid::default(),
        seed: 7,
        pain_target: PainTimepoint::Arrival,
        orade_weights: OradeWeights::default(),
        registry: gt.registry.clone(),
        n_surgery_types: gt.n_surgery_types(),
    }
}

pub fn fit(gt: &ScmGroundTruth, records: &[EncounterRecord], family: Family) -> CadrModel {
    fit_cadr(records, &cadr_config(gt, endpoint_kind(family), Hyper::new())).unwrap()
}

/// Noiseless default cohort (n = 5000) split 80/15/5, with every family fitted
/// on the training part.
pub struct Fixture {
    pub cohort: Cohort,
    pub train: Vec<EncounterRecord>,
    pub held_out: Vec<EncounterRecord>,
    pub models: BTreeMap<Family, CadrModel>,
}

impl Fixture {
    pub fn gt(&self) -> &ScmGroundTruth {
        &self.cohort.ground_truth
    }

    pub fn model(&self, f: Family) -> &CadrModel {
        &self.models[&f]
    }
}

pub fn noiseless() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let gt = ScmGroundTruth::default().noiseless();
        let cohort = generate_cohort(&gt, 5000).unwrap();
        let s = split(cohort.records.len(), &SplitSpec::default()).unwrap();
        let train = select(&cohort.records, &s.train);
        let held_out = select(&cohort.records, &s.retention.open());
        let models = Family::ALL
            .par_iter()
            .map(|&f| (f, fit(&gt, &train, f)))
            .collect();
        Fixture {
            cohort,
            train,
            held_out,
            models,
        }
    })
}
