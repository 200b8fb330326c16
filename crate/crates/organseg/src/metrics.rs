//! Segmentation scoring (dice, precision, recall, F), dataset-level
//! evaluation tables, and the stages-by-epochs parameter-sweep harness.

use crate::anatomy::OrganId;
use crate::error::{Error, Result};
use crate::pipeline::SegmentationResult;
use crate::raster::BitMask;
use std::fmt::Write as _;

/// Overlap counts of a predicted mask against a truth mask.
#[derive(Debug, Clone, Copy, Default)]
struct Overlap {
    intersection: u64,
    predicted: u64,
    truth: u64,
}

fn overlap(pred: &BitMask, truth: &BitMask) -> Result<Overlap> {
    if !pred.same_dims(truth) {
        return Err(Error::InvalidArgument(format!(
            "mask dimensions {}x{} vs {}x{}",
            pred.width(),
            pred.height(),
            truth.width(),
            truth.height()
        )));
    }
    let mut counts = Overlap::default();
    for (&p, &t) in pred.bits().iter().zip(truth.bits()) {
        counts.intersection += (p && t) as u64;
        counts.predicted += p as u64;
        counts.truth += t as u64;
    }
    Ok(counts)
}

/// Dice coefficient `2|A∩B| / (|A|+|B|)`; two empty masks score 1.0.
pub fn dice(pred: &BitMask, truth: &BitMask) -> Result<f64> {
    let o = overlap(pred, truth)?;
    Ok(dice_of(o))
}

fn dice_of(o: Overlap) -> f64 {
    if o.predicted + o.truth == 0 {
        1.0
    } else {
        2.0 * o.intersection as f64 / (o.predicted + o.truth) as f64
    }
}

/// Precision, recall and F-score. An empty prediction scores precision 1.0
/// against an empty truth and 0.0 otherwise; recall is symmetric.
pub fn prf(pred: &BitMask, truth: &BitMask) -> Result<(f64, f64, f64)> {
    let o = overlap(pred, truth)?;
    Ok(prf_of(o))
}

fn prf_of(o: Overlap) -> (f64, f64, f64) {
    let precision = if o.predicted == 0 {
        if o.truth == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        o.intersection as f64 / o.predicted as f64
    };
    let recall = if o.truth == 0 {
        if o.predicted == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        o.intersection as f64 / o.truth as f64
    };
    let f_score = harmonic(precision, recall);
    (precision, recall, f_score)
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Per-organ aggregate row: means of the per-image dice/precision/recall
/// plus the harmonic mean of the aggregated precision and recall.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreRow {
    pub organ: OrganId,
    pub n: usize,
    pub dice: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_score: f64,
}

/// Scores (result, truth) pairs organ by organ. Results flagged not-found
/// are scored as empty predictions. Rows appear in canonical organ order;
/// the CSV has columns `organ,n,dice,precision,recall,f_score`.
pub fn evaluate_dataset<I>(pairs: I) -> Result<(Vec<ScoreRow>, String)>
where
    I: IntoIterator<Item = (SegmentationResult, BitMask)>,
{
    let mut sums = [(0usize, 0.0f64, 0.0f64, 0.0f64); 5];
    let mut total = 0usize;
    for (result, truth) in pairs {
        let o = if result.found {
            overlap(&result.mask, &truth)?
        } else {
            // empty prediction against the truth
            Overlap { intersection: 0, predicted: 0, truth: truth.count_ones() as u64 }
        };
        let d = dice_of(o);
        let (p, r, _) = prf_of(o);
        let slot = &mut sums[result.organ.class_index()];
        slot.0 += 1;
        slot.1 += d;
        slot.2 += p;
        slot.3 += r;
        total += 1;
    }
    if total == 0 {
        return Err(Error::InvalidArgument("no result/truth pairs to evaluate".into()));
    }
    let mut rows = Vec::new();
    for organ in OrganId::ALL {
        let (n, d, p, r) = sums[organ.class_index()];
        if n == 0 {
            continue;
        }
        let precision = p / n as f64;
        let recall = r / n as f64;
        rows.push(ScoreRow {
            organ,
            n,
            dice: d / n as f64,
            precision,
            recall,
            f_score: harmonic(precision, recall),
        });
    }
    let mut csv = String::from("organ,n,dice,precision,recall,f_score\n");
    for row in &rows {
        writeln!(
            csv,
            "{},{},{:.6},{:.6},{:.6},{:.6}",
            row.organ, row.n, row.dice, row.precision, row.recall, row.f_score
        )
        .expect("writing to a String cannot fail");
    }
    Ok((rows, csv))
}

/// One parameter-sweep measurement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub conv_stages: usize,
    pub epochs: usize,
    pub shape_accuracy: f64,
    pub mean_dice: f64,
}

/// Runs `train_eval(stages, epochs)` over the full grid in row-major grid
/// order and renders the report CSV
/// (`conv_stages,epochs,shape_accuracy,mean_dice`).
pub fn sweep<F>(
    stage_grid: &[usize],
    epoch_grid: &[usize],
    mut train_eval: F,
) -> Result<(Vec<SweepPoint>, String)>
where
    F: FnMut(usize, usize) -> Result<(f64, f64)>,
{
    if stage_grid.is_empty() || epoch_grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    let mut points = Vec::with_capacity(stage_grid.len() * epoch_grid.len());
    for &stages in stage_grid {
        for &epochs in epoch_grid {
            let (shape_accuracy, mean_dice) = train_eval(stages, epochs)?;
            points.push(SweepPoint { conv_stages: stages, epochs, shape_accuracy, mean_dice });
        }
    }
    let mut csv = String::from("conv_stages,epochs,shape_accuracy,mean_dice\n");
    for p in &points {
        writeln!(
            csv,
            "{},{},{:.6},{:.6}",
            p.conv_stages, p.epochs, p.shape_accuracy, p.mean_dice
        )
        .expect("writing to a String cannot fail");
    }
    Ok((points, csv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::Rect;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mask_of(w: u32, h: u32, mut set: impl FnMut(u32, u32) -> bool) -> BitMask {
        let mut m = BitMask::new_empty(w, h);
        for y in 0..h {
            for x in 0..w {
                if set(x, y) {
                    m.set(x, y, true);
                }
            }
        }
        m
    }

    #[test]
    fn dice_identity_and_disjoint() {
        let a = mask_of(10, 10, |x, _| x < 5);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = mask_of(10, 10, |x, _| x >= 5);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
    }

    #[test]
    fn dice_half_overlap() {
        // |pred| = |truth| = 100, overlap 50 -> 2*50/200 = 0.5
        let pred = mask_of(20, 10, |x, _| x < 10);
        let truth = mask_of(20, 10, |x, _| (5..15).contains(&x));
        assert_eq!(dice(&pred, &truth).unwrap(), 0.5);
    }

    #[test]
    fn dice_both_empty_is_one() {
        let a = BitMask::new_empty(4, 4);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn dice_dimension_mismatch_is_argument_error() {
        let a = BitMask::new_empty(4, 4);
        let b = BitMask::new_empty(5, 4);
        assert!(matches!(dice(&a, &b).unwrap_err(), Error::InvalidArgument(_)));
    }

    #[test]
    fn prf_identity_subset_and_empty() {
        let truth = mask_of(20, 10, |x, _| x < 10);
        assert_eq!(prf(&truth, &truth).unwrap(), (1.0, 1.0, 1.0));

        let pred = mask_of(20, 10, |x, _| x < 5);
        let (p, r, f) = prf(&pred, &truth).unwrap();
        assert_eq!((p, r), (1.0, 0.5));
        assert!((f - 2.0 / 3.0).abs() < 1e-12);

        let empty = BitMask::new_empty(20, 10);
        assert_eq!(prf(&empty, &truth).unwrap(), (0.0, 0.0, 0.0));
    }

    #[test]
    fn metrics_match_counting_oracle_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let pred = mask_of(32, 32, |_, _| rng.gen_bool(0.3));
            let truth = mask_of(32, 32, |_, _| rng.gen_bool(0.3));
            let mut i = 0u64;
            let mut np = 0u64;
            let mut nt = 0u64;
            for y in 0..32 {
                for x in 0..32 {
                    let (p, t) = (pred.get(x, y), truth.get(x, y));
                    i += (p && t) as u64;
                    np += p as u64;
                    nt += t as u64;
                }
            }
            let expect_dice = if np + nt == 0 { 1.0 } else { 2.0 * i as f64 / (np + nt) as f64 };
            assert_eq!(dice(&pred, &truth).unwrap(), expect_dice);
            let (p, r, f) = prf(&pred, &truth).unwrap();
            let ep = if np == 0 { (nt == 0) as u64 as f64 } else { i as f64 / np as f64 };
            let er = if nt == 0 { (np == 0) as u64 as f64 } else { i as f64 / nt as f64 };
            assert_eq!(p, ep);
            assert_eq!(r, er);
            // F1 equals dice for binary masks
            assert!((f - expect_dice).abs() < 1e-12);
        }
    }

    #[test]
    fn dice_symmetry_and_prf_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let a = mask_of(16, 16, |_, _| rng.gen_bool(0.4));
            let b = mask_of(16, 16, |_, _| rng.gen_bool(0.4));
            assert_eq!(dice(&a, &b).unwrap(), dice(&b, &a).unwrap());
            let (pa, ra, _) = prf(&a, &b).unwrap();
            let (pb, rb, _) = prf(&b, &a).unwrap();
            assert_eq!(pa, rb);
            assert_eq!(ra, pb);
        }
    }

    #[test]
    fn adding_true_positive_never_decreases_dice() {
        let truth = mask_of(16, 16, |x, y| x > 4 && y > 4);
        let mut pred = mask_of(16, 16, |x, y| x > 8 && y > 8);
        let mut last = dice(&pred, &truth).unwrap();
        for x in 5..9 {
            pred.set(x, 6, true);
            let now = dice(&pred, &truth).unwrap();
            assert!(now >= last);
            last = now;
        }
    }

    fn result_with(organ: OrganId, mask: BitMask, found: bool) -> SegmentationResult {
        SegmentationResult {
            organ,
            found,
            bounding_box: Rect::new(0, 0, 1, 1).unwrap(),
            mask,
            score: 1.0,
        }
    }

    #[test]
    fn evaluate_perfect_results_score_one() {
        let pairs: Vec<(SegmentationResult, BitMask)> = OrganId::ALL
            .into_iter()
            .map(|organ| {
                let truth = mask_of(8, 8, |x, _| x < 3);
                (result_with(organ, truth.clone(), true), truth)
            })
            .collect();
        let (rows, csv) = evaluate_dataset(pairs).unwrap();
        assert_eq!(rows.len(), 5);
        for row in &rows {
            assert_eq!((row.dice, row.precision, row.recall, row.f_score), (1.0, 1.0, 1.0, 1.0));
            assert_eq!(row.n, 1);
        }
        assert!(csv.starts_with("organ,n,dice,precision,recall,f_score\n"));
        assert_eq!(csv.lines().count(), 6);
    }

    #[test]
    fn evaluate_averages_per_organ() {
        let truth = mask_of(8, 8, |x, _| x < 4);
        let half = mask_of(8, 8, |x, y| x < 4 && y < 4);
        // dice(half, truth) = 2*16/(16+32) = 2/3; with a perfect pair the
        // brain mean dice is (1 + 2/3)/2 = 5/6.
        let pairs = vec![
            (result_with(OrganId::Brain, truth.clone(), true), truth.clone()),
            (result_with(OrganId::Brain, half, true), truth.clone()),
        ];
        let (rows, _) = evaluate_dataset(pairs).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].n, 2);
        assert!((rows[0].dice - 5.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_not_found_scores_as_empty_prediction() {
        let truth = mask_of(8, 8, |x, _| x < 4);
        let pairs = vec![(
            result_with(OrganId::Kidney, mask_of(8, 8, |_, _| true), false),
            truth,
        )];
        let (rows, _) = evaluate_dataset(pairs).unwrap();
        assert_eq!(rows[0].dice, 0.0);
        assert_eq!(rows[0].precision, 0.0);
    }

    #[test]
    fn evaluate_empty_input_is_argument_error() {
        assert!(matches!(
            evaluate_dataset(Vec::new()).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn sweep_runs_grid_in_order() {
        let mut calls = Vec::new();
        let (points, csv) = sweep(&[2, 3], &[0, 10], |s, e| {
            calls.push((s, e));
            Ok((0.5, 0.25))
        })
        .unwrap();
        assert_eq!(calls, vec![(2, 0), (2, 10), (3, 0), (3, 10)]);
        assert_eq!(points.len(), 4);
        assert!(csv.starts_with("conv_stages,epochs,shape_accuracy,mean_dice\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn sweep_single_cell() {
        let (points, csv) = sweep(&[3], &[70], |_, _| Ok((1.0, 1.0))).unwrap();
        assert_eq!(points.len(), 1);
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn sweep_empty_grid_is_argument_error() {
        assert!(matches!(
            sweep(&[], &[10], |_, _| Ok((0.0, 0.0))).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }
}
