//! Quality enhancement for block-codec chroma images, driven by an
//! encoder-side online-learning loop.
//!
//! The crate is organized around a small deterministic tensor engine with
//! reverse-mode autodiff ([`tensor`]), an exact block-DCT expressed as a
//! strided convolution ([`freq`]), the enhancement network itself
//! ([`network`]), offline/online training ([`training`]), entropy coding of
//! the online parameter residual ([`param_codec`]), a stand-in codec
//! degradation model ([`codec_sim`]), and metrics plus the end-to-end
//! encoder/decoder simulation ([`harness`]).

pub mod codec_sim;
pub mod freq;
pub mod harness;
pub mod network;
pub mod param_codec;
pub mod tensor;
pub mod training;
