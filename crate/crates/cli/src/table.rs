//! Plain-text table for evaluation results: PSNR and Chamfer distance side
//! by side, one column per view-count condition.

use spry_core::metrics::EvalResult;

pub fn format_eval_table(method: &str, results: &[EvalResult]) -> String {
    let header: Vec<String> = results.iter().map(|r| format!("{}-view", r.view_count)).collect();
    let psnr: Vec<String> = results.iter().map(|r| format!("{:.3}", r.psnr_mean)).collect();
    let cd: Vec<String> = results
        .iter()
        .map(|r| match r.chamfer {
            Some(c) => format!("{c:.5}"),
            None => "-".to_string(),
        })
        .collect();

    let col = header
        .iter()
        .chain(&psnr)
        .chain(&cd)
        .map(String::len)
        .max()
        .unwrap_or(6)
        .max(6)
        + 2;
    let method_col = method.len().max("Method".len()) + 2;

    let mut out = String::new();
    let group_width = col * results.len();
    out.push_str(&format!(
        "{:<method_col$}{:<group_width$}{:<group_width$}\n",
        "Method", "PSNR", "Chamfer Distance (CD)"
    ));
    out.push_str(&format!("{:<method_col$}", ""));
    for h in header.iter().chain(header.iter()) {
        out.push_str(&format!("{h:<col$}"));
    }
    out.push('\n');
    out.push_str(&format!("{method:<method_col$}"));
    for v in psnr.iter().chain(cd.iter()) {
        out.push_str(&format!("{v:<col$}"));
    }
    out.push('\n');
    out
}
