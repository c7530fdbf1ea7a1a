//! Named kernels, measure families and gallery items.

use weightlab_core::{hilbert, riesz, Kernel};

/// `hilbert` or `riesz_<j> n=<n>`.
pub fn kernel_by_name(name: &str) -> anyhow::Result<Kernel> {
    let name = name.trim();
    if name == "hilbert" {
        return Ok(hilbert());
    }
    let parse = || -> Option<(usize, usize)> {
        let rest = name.strip_prefix("riesz_")?;
        let (j, n) = rest.split_once(char::is_whitespace)?;
        let n = n.trim().strip_prefix("n=")?;
        Some((j.parse().ok()?, n.parse().ok()?))
    };
    match parse() {
        Some((j, n)) => Ok(riesz(j, n)?),
        None => anyhow::bail!("unknown kernel {name:?}; expected \"hilbert\" or \"riesz_<j> n=<n>\""),
    }
}

pub struct Builtin {
    pub kind: &'static str,
    pub name: String,
    pub description: String,
}

pub fn builtins() -> Vec<Builtin> {
    let mut out = vec![Builtin {
        kind: "kernel",
        name: "hilbert".into(),
        description: "1/(x − y) on R; C0 = 2, δ = 1, a = 1, u0 = +e1".into(),
    }];
    for n in 1..=3 {
        let k = riesz(1, n).expect("valid");
        out.push(Builtin {
            kind: "kernel",
            name: format!("riesz_j n={n}"),
            description: format!("(x_j − y_j)/|x − y|^{} for j = 1..{n}; C0 = {}, δ = 1, a = 1, u0 = +e_j", n + 1, k.c0),
        });
    }
    let measures = [
        ("zero", "the zero measure"),
        ("lebesgue", "dx, on all of space or on a window"),
        ("power", "|x − c|^α dx on a window"),
        ("exponential", "e^{−|x|} dx, or e^{−|x_i|} dx with \"axis\""),
        ("indicator", "value·χ_[lo,hi) dx on a window"),
        ("atoms", "finite sum of point masses"),
        ("file", "measure JSON: atoms, grid, cells (\"inf\" sentinel), tail"),
        ("inline", "the same JSON embedded in the scenario"),
        ("sum", "sum of the listed parts"),
    ];
    out.extend(measures.iter().map(|(n, d)| Builtin { kind: "measure", name: (*n).into(), description: (*d).into() }));
    out.extend(crate::gallery::ITEMS.iter().map(|(n, d)| Builtin { kind: "gallery", name: (*n).into(), description: (*d).into() }));
    out
}

pub fn render_builtins() -> String {
    let rows = builtins();
    let width = rows.iter().map(|b| b.name.chars().count()).max().unwrap_or(0);
    let mut s = String::new();
    for b in rows {
        let pad = width - b.name.chars().count();
        s.push_str(&format!("{:<8} {}{}  {}\n", b.kind, b.name, " ".repeat(pad), b.description));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_names() {
        assert_eq!(kernel_by_name("hilbert").unwrap().name, "hilbert");
        let k = kernel_by_name("riesz_2 n=3").unwrap();
        assert_eq!(k.dim(), 3);
        assert!(kernel_by_name("riesz_4 n=3").is_err());
        assert!(kernel_by_name("cauchy").is_err());
    }

    #[test]
    fn listing_contains_the_named_entries() {
        let s = render_builtins();
        for needle in ["hilbert", "riesz_j n=2", "remark-1", "remark-2", "exp-directional"] {
            assert!(s.contains(needle), "{needle}");
        }
        assert_eq!(s, render_builtins());
    }
}
