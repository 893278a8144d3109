/// Static per-element data used by parsing, featurisation and embedding.
#[derive(Debug)]
pub struct ElementData {
    pub symbol: &'static str,
    pub number: u8,
    /// Covalent radius in Å.
    pub covalent: f64,
    /// Van der Waals radius in Å.
    pub vdw: f64,
    /// Allowed valences for implicit hydrogen assignment; empty for metals.
    pub valences: &'static [u8],
}

macro_rules! el {
    ($s:expr, $n:expr, $c:expr, $v:expr, $val:expr) => {
        ElementData {
            symbol: $s,
            number: $n,
            covalent: $c,
            vdw: $v,
            valences: $val,
        }
    };
}

pub static ELEMENTS: &[ElementData] = &[
    el!("H", 1, 0.31, 1.10, &[1]),
    el!("Li", 3, 1.28, 1.82, &[]),
    el!("B", 5, 0.84, 1.92, &[3]),
    el!("C", 6, 0.76, 1.70, &[4]),
    el!("N", 7, 0.71, 1.55, &[3, 5]),
    el!("O", 8, 0.66, 1.52, &[2]),
    el!("F", 9, 0.57, 1.47, &[1]),
    el!("Na", 11, 1.66, 2.27, &[]),
    el!("Mg", 12, 1.41, 1.73, &[]),
    el!("Al", 13, 1.21, 1.84, &[]),
    el!("Si", 14, 1.11, 2.10, &[4]),
    el!("P", 15, 1.07, 1.80, &[3, 5]),
    el!("S", 16, 1.05, 1.80, &[2, 4, 6]),
    el!("Cl", 17, 1.02, 1.75, &[1]),
    el!("K", 19, 2.03, 2.75, &[]),
    el!("Ca", 20, 1.76, 2.31, &[]),
    el!("Fe", 26, 1.32, 2.00, &[]),
    el!("Cu", 29, 1.32, 1.40, &[]),
    el!("Zn", 30, 1.22, 1.39, &[]),
    el!("Ge", 32, 1.20, 2.11, &[4]),
    el!("As", 33, 1.19, 1.85, &[3, 5]),
    el!("Se", 34, 1.20, 1.90, &[2, 4, 6]),
    el!("Br", 35, 1.20, 1.85, &[1]),
    el!("Sn", 50, 1.39, 2.17, &[]),
    el!("Te", 52, 1.38, 2.06, &[2]),
    el!("I", 53, 1.39, 1.98, &[1]),
    el!("Pt", 78, 1.36, 1.75, &[]),
    el!("Hg", 80, 1.32, 1.55, &[]),
];

pub fn by_symbol(symbol: &str) -> Option<&'static ElementData> {
    ELEMENTS.iter().find(|e| e.symbol == symbol)
}

pub fn by_number(number: u8) -> &'static ElementData {
    ELEMENTS
        .iter()
        .find(|e| e.number == number)
        .expect("element numbers on graphs always come from the table")
}
