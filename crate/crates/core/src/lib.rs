//! Search for and exactly verify weighted sum-of-squares certificates
//! `f·g^N = Σ_e s_e·h^e` over the rationals.

pub mod driver;
pub mod exact;
pub mod gram;
pub mod parse;
pub mod poly;
pub mod sdp;
