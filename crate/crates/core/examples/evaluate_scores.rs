//! AUROC, FPR at 95% TPR and the threshold decision rule on plain score lists.

use bbas::eval::{auroc, decide, fpr_at_95tpr, Decision};

pub fn run_example() -> bbas::Result<(f64, f64)> {
    let ind = [0.1, 0.4];
    let ood = [0.35, 0.8];
    let a = auroc(&ind, &ood)?;
    println!("AUROC = {a}");

    let ind: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
    let ood: Vec<f64> = (0..100).map(|i| 0.5 + i as f64 / 100.0).collect();
    let (fpr, tau) = fpr_at_95tpr(&ind, &ood)?;
    println!("FPR95 = {fpr}, threshold = {tau}");
    let flagged = ood.iter().filter(|&&s| decide(s, tau) == Decision::Ood).count();
    println!("{flagged} of {} OOD samples flagged", ood.len());
    Ok((a, fpr))
}

fn main() -> bbas::Result<()> {
    run_example()?;
    Ok(())
}
