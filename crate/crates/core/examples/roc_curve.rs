//! ROC curve, AUC and threshold metrics over a handful of scores.

use reqsentry::eval::{auc, rates, roc_curve, write_roc_csv, ConfusionCounts};

fn main() -> reqsentry::Result<()> {
    let scores = [0.95, 0.9, 0.7, 0.62, 0.6, 0.4, 0.35, 0.2, 0.1, 0.05];
    let labels = [true, true, false, true, true, false, false, true, false, false];

    let curve = roc_curve(&scores, &labels)?;
    write_roc_csv(&curve, std::io::stdout().lock())?;
    println!("auc {:.4}", auc(&curve));

    for t in [0.3, 0.5, 0.8] {
        let r = rates(&ConfusionCounts::at_threshold(&scores, &labels, t)?);
        println!("threshold {t}: tpr {:.2} fpr {:.2} precision {:.2}", r.tpr, r.fpr, r.precision);
    }
    Ok(())
}
