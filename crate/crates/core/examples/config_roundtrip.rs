//! Writing a config file, loading it back, and reading a curve CSV.

use metacomm::harness::{
    load_config, read_curve, write_curve, CurveRow, CurveTable, ExperimentConfig, Method, Metric, Profile,
};

fn main() -> metacomm::Result<()> {
    let dir = std::env::temp_dir().join("metacomm-config-example");
    std::fs::create_dir_all(&dir).map_err(|source| metacomm::Error::Io {
        path: dir.clone(),
        source,
    })?;

    let cfg = ExperimentConfig::defaults(Profile::Autoencoder);
    let path = dir.join("autoencoder.conf");
    cfg.save(&path)?;
    print!("{}", std::fs::read_to_string(&path).unwrap_or_default());
    assert_eq!(load_config(&path)?, cfg);

    match ExperimentConfig::parse("profile = demod\neta_inner = fast\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }

    let mut table = CurveTable::new();
    table.push(CurveRow::summarize(
        4.0,
        Method::Maml,
        Metric::Ser,
        &[0.21, 0.25, 0.19],
        3,
    ));
    let csv = dir.join("curve.csv");
    write_curve(&table, &csv)?;
    print!("{}", table.to_csv());
    assert_eq!(read_curve(&csv)?, table);
    Ok(())
}
