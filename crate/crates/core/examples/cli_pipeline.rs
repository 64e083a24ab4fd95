// Drives the `errlens` command line in-process: score a corpus, then
// meta-evaluate the resulting reports against pairwise judgments.

use std::fs;

use errlens::cli::{run_with, EXIT_OK};

fn errlens(args: &[&str]) -> anyhow::Result<String> {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = run_with(std::iter::once("errlens").chain(args.iter().copied()), &mut out, &mut err);
    anyhow::ensure!(code == EXIT_OK, "exit {code}: {}", String::from_utf8_lossy(&err));
    Ok(String::from_utf8(out)?)
}

pub fn run_example() -> anyhow::Result<()> {
    let dir = tempfile::tempdir()?;
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();

    fs::write(
        p("samples.tsv"),
        "id\tsystem\tsegment\tref\thyp\n\
         1\tgood\ts1\tthe cat sat on the mat\tthe cat sat on the mat\n\
         2\tbad\ts1\tthe cat sat on the mat\tcat the on sat mat\n\
         3\tgood\ts2\tbirds sang near the river\tbirds sang near the river\n\
         4\tbad\ts2\tbirds sang near the river\tbirds sang near a river\n",
    )?;
    fs::write(p("darr.tsv"), "segment_id\tbetter_system\tworse_system\ns1\tgood\tbad\ns2\tgood\tbad\n")?;

    errlens(&["score", "--samples", &p("samples.tsv"), "--weights", "1.4:1", "--out", &p("reports.jsonl")])?;
    let table = errlens(&["meta-eval", "--judgments", &p("darr.tsv"), "--scores", &p("reports.jsonl")])?;
    print!("{table}");
    anyhow::ensure!(table.lines().nth(1).is_some_and(|row| row.contains("\t1\t")));

    let sweep = errlens(&["sweep", "--reports", &p("reports.jsonl"), "--judgments", &p("darr.tsv"), "--sweep", "1,2"])?;
    print!("{sweep}");
    Ok(())
}

fn main() -> anyhow::Result<()> {
    run_example()
}
