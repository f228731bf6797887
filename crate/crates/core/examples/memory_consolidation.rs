//! Fill a small memory bank past capacity and watch consolidation keep the
//! most used entries as long-term prototypes.

use icl_seg::encoder::{PatchEncoder, ToyEncoder};
use icl_seg::memory::{MemoryBank, MemoryConfig, UsageAccumulator};
use icl_seg::synthbench::{generate, SynthSpec};

fn main() -> icl_seg::Result<()> {
    let set = generate(&SynthSpec {
        n_classes: 2,
        pairs_per_class: 4,
        ..Default::default()
    })?;
    let encoder = ToyEncoder::default();
    let mut bank = MemoryBank::new(MemoryConfig {
        capacity: 64,
        prototype_budget: 8,
    })?;

    for pair in set.classes.iter().flat_map(|c| &c.pairs) {
        let keys = encoder.encode_keys(&pair.image)?;
        if !bank.is_empty() {
            // reading the new pair against the bank marks useful entries
            let mut usage = UsageAccumulator::for_bank(&bank);
            bank.readout_tracked(&keys, 0.01, Some(30), &mut usage)?;
            bank.merge_usage(&usage)?;
        }
        let report = bank.add_support(&keys, &encoder.encode_values(&pair.image, &pair.mask)?, &pair.id)?;
        print!(
            "{}: {} entries ({} long-term, {} working)",
            pair.id,
            bank.len(),
            bank.longterm_count(),
            bank.working_count()
        );
        if report.performed {
            print!(", consolidated: {} evicted", report.assignments.len());
        }
        println!();
    }
    bank.check_invariants()?;
    for i in 0..bank.longterm_count() {
        let src = bank.source(i);
        println!(
            "prototype {i}: {} patch {}, usage {:.2}, value {:.2}",
            src.pair_id,
            src.patch,
            bank.usage(i),
            bank.value(i)[0]
        );
    }
    Ok(())
}
