//! Builds the per-task accuracy table from a few eval rows; tasks without a
//! row are shown as absent.
//!
//!     cargo run --example report

use tmemnn::cli::{render_aligned, render_tsv, report_table, EvalRow};
use tmemnn::corpus::Variant;
use tmemnn::model::Mode;

fn main() {
    let v = Variant::EN_1K;
    let rows = [
        EvalRow {
            task: 1,
            variant: v,
            mode: Mode::Point,
            acc_1: 100.0,
            acc_10: 100.0,
            nu: None,
        },
        EvalRow {
            task: 1,
            variant: v,
            mode: Mode::Variational,
            acc_1: 100.0,
            acc_10: 100.0,
            nu: Some([7.1, 8.0, 9.3]),
        },
        EvalRow {
            task: 2,
            variant: v,
            mode: Mode::Variational,
            acc_1: 77.0,
            acc_10: 84.0,
            nu: Some([40.2, 39.0, 51.7]),
        },
    ];
    let table = report_table(&rows, v);
    print!("{}", render_aligned(&table));
    println!();
    print!(
        "{}",
        render_tsv(&table)
            .lines()
            .take(3)
            .map(|l| format!("{l}\n"))
            .collect::<String>()
    );
}
