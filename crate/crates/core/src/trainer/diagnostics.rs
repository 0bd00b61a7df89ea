use serde::{Deserialize, Serialize};

use super::{evaluate, upweight_errors, Spread};
use crate::committee::weights_from_counts;
use crate::datagen::Dataset;
use crate::error::Result;
use crate::metrics::{consensus_ratio_curve, enrichment, pairwise_disagreement, CurveBucket};
use crate::Committee;

/// State of a committee measured on the training set (and the validation
/// set for unbiased accuracy).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeSnapshot {
    pub member_guiding: Spread,
    pub member_conflicting: Option<Spread>,
    pub member_unbiased_val: Option<Spread>,
    /// Enrichment of the committee's sample weights over the training set.
    pub enrichment: Option<f64>,
    pub mean_weight_conflicting: Option<f64>,
    pub mean_weight_guiding: Option<f64>,
    /// Mean number of training conflicting samples on which two members
    /// disagree.
    pub disagreement_conflicting: Option<f64>,
    pub consensus_curve: Vec<CurveBucket>,
}

fn mean_where(values: &[f64], flags: &[bool], want: bool) -> Option<f64> {
    let sel: Vec<f64> = values.iter().zip(flags).filter(|(_, &f)| f == want).map(|(v, _)| *v).collect();
    (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
}

pub fn committee_snapshot(committee: &Committee, train: &Dataset, val: &Dataset, alpha: f64) -> Result<CommitteeSnapshot> {
    let counts_train = train.group_counts();
    let (mut guiding, mut conflicting, mut unbiased) = (Vec::new(), Vec::new(), Vec::new());
    for member in committee.members() {
        let r = evaluate(member, train, counts_train)?;
        guiding.extend(r.guiding);
        conflicting.extend(r.conflicting);
        unbiased.extend(evaluate(member, val, counts_train)?.unbiased);
    }
    let flags = train.conflicting_flags();
    let counts = committee.consensus_counts(train.features(), &train.labels())?;
    let weights = weights_from_counts(&counts, committee.m(), alpha)?.weights;
    let conflicting_rows: Vec<usize> = (0..train.len()).filter(|&i| flags[i]).collect();
    let disagreement_conflicting = if committee.m() > 1 && !conflicting_rows.is_empty() {
        let x = train.batch_features(&conflicting_rows)?;
        Some(pairwise_disagreement(&committee.member_predictions(&x)?)?.mean)
    } else {
        None
    };
    Ok(CommitteeSnapshot {
        member_guiding: Spread::of(&guiding).unwrap_or(Spread {
            mean: f64::NAN,
            min: f64::NAN,
            max: f64::NAN,
        }),
        member_conflicting: Spread::of(&conflicting),
        member_unbiased_val: Spread::of(&unbiased),
        enrichment: enrichment(&weights, &flags).ok(),
        mean_weight_conflicting: mean_where(&weights, &flags, true),
        mean_weight_guiding: mean_where(&weights, &flags, false),
        disagreement_conflicting,
        consensus_curve: consensus_ratio_curve(&counts, &flags, committee.m())?,
    })
}

/// Error-set reweighting measured on the training set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSetSnapshot {
    pub upweight: f64,
    pub error_set_size: usize,
    pub conflicting_in_error_set: usize,
    pub enrichment: Option<f64>,
}

pub fn error_set_snapshot(flags: &[bool], train: &Dataset, upweight: f64) -> ErrorSetSnapshot {
    let conflicting = train.conflicting_flags();
    let weights = upweight_errors(flags, upweight);
    ErrorSetSnapshot {
        upweight,
        error_set_size: flags.iter().filter(|&&e| e).count(),
        conflicting_in_error_set: flags.iter().zip(&conflicting).filter(|(e, c)| **e && **c).count(),
        enrichment: enrichment(&weights, &conflicting).ok(),
    }
}
