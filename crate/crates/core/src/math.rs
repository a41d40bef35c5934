//! `f64` functions that `core` lacks without `std`.

pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub fn floor(x: f64) -> f64 {
    libm::floor(x)
}
