//! Fragment masses from single-bond cuts and the simulated stick spectrum.

use mfgn::chem::{bond_cut_fragments, parse_smiles, parse_spectrum_text, simulate_spectrum};

fn main() -> mfgn::error::Result<()> {
    let g = parse_smiles("CCCCCCCCCC(=O)OC")?;
    for cut in bond_cut_fragments(&g) {
        let (a, b) = cut.bond;
        println!(
            "cut {}{a}-{}{b}: {} + {}",
            g.atoms[a].symbol(),
            g.atoms[b].symbol(),
            cut.masses.0,
            cut.masses.1
        );
    }
    let peaks = simulate_spectrum(&g);
    let line: Vec<String> = peaks.iter().map(|p| format!("{}:{:.2}", p.mz, p.intensity)).collect();
    println!("spectrum: {}", line.join(" "));

    let text = "# measured\n186 0.12\n74 1.0\n87 0.45\n";
    println!("parsed: {:?}", parse_spectrum_text(text)?);
    Ok(())
}
