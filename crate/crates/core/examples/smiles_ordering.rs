//! SMILES parsing, canonical form, and the atom order behind the bond matrix.

use mfgn::chem::{canonical_smiles, parse_smiles, MoleculeInstance, OrderOptions};

fn main() -> mfgn::error::Result<()> {
    let written = ["COC(=O)CCCCCCCCC", "CCCCCCCCCC(=O)OC"];
    for s in written {
        println!("{s:>20} -> {}", canonical_smiles(s)?);
    }

    let graph = parse_smiles("CCCCCCCCCC(=O)OC")?;
    println!("formula {} with {} implicit H", graph.formula(), graph.hydrogen_count());

    for (label, opts) in [
        ("ester anchor", OrderOptions::default()),
        (
            "traversal order",
            OrderOptions {
                ester_anchor: false,
                ..OrderOptions::default()
            },
        ),
    ] {
        let inst = MoleculeInstance::from_smiles("CCCCCCCCCC(=O)OC", vec![], &opts)?;
        inst.check_invariants()?;
        let atoms: Vec<&str> = inst.atoms.iter().map(|a| a.element.symbol()).collect();
        println!("{label}: {}", atoms.join(" "));
        for row in &inst.bond_matrix[..3] {
            println!("  {row:?}");
        }
    }

    match parse_smiles("CC(=O") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
