//! Flatten every resource kind into schema-tagged tables and write CSV.
//!
//!     cargo run -p fhirflow --example flatten_tables [out-dir]

use std::path::PathBuf;

use fhirflow::explore::export_csv_file;
use fhirflow::fhir::parse_value;
use fhirflow::flatten::StudyTables;
use fhirflow::synth::CorpusSpec;
use fhirflow::CodeRegistry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let corpus = CorpusSpec::small().generate();
    let envelopes = corpus
        .all()
        .map(parse_value)
        .collect::<Result<Vec<_>, _>>()?;
    let tables = StudyTables::from_envelopes(&envelopes, &CodeRegistry::default())?;

    for (name, table) in [
        ("observations", &tables.observations),
        ("ecgs", &tables.ecgs),
        ("questionnaires", &tables.questionnaires),
        ("users", &tables.users),
    ] {
        let path = out.join(format!("{name}.csv"));
        let bytes = export_csv_file(table, &path)?;
        println!(
            "{:<18} {:>4} rows  {:?}",
            table.schema().to_string(),
            table.len(),
            table.column_names()
        );
        println!("{:<18} {bytes} bytes", "");
        println!("{:<18} -> {}", "", path.display());
    }
    println!(
        "unresolved questionnaire text: {}",
        tables.questionnaire_report.unresolved.len()
    );
    Ok(())
}
