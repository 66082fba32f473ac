//! Lists the classes of each labelling scenario and which base file types
//! fall into them.

use fragnet::corpus::{Scenario, Taxonomy};

fn main() {
    let tax = Taxonomy::builtin();
    for s in Scenario::ALL {
        println!("scenario {} ({} classes)", s.id(), s.n_classes());
        if s.n_classes() == tax.len() {
            println!("  one class per type");
            continue;
        }
        for (c, name) in s.class_names().iter().enumerate() {
            let members: Vec<&str> = tax
                .types()
                .iter()
                .filter(|t| s.map(t.label) == Some(c))
                .map(|t| t.name.as_str())
                .collect();
            if members.len() <= 8 {
                println!("  {name:<20} {}", members.join(" "));
            } else {
                println!("  {name:<20} {} types", members.len());
            }
        }
        let dropped = tax.types().iter().filter(|t| s.map(t.label).is_none()).count();
        if dropped > 0 {
            println!("  ({dropped} types not used)");
        }
    }
}
