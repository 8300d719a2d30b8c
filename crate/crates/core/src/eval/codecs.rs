use crate::bits::Bits;
use crate::channel::ChannelSpec;
use crate::codec::{dp_decode_parallel, dp_decode_sc, dp_encode_eval, Feedback, NeuralCode};
use crate::error::{Error, Result};
use crate::nn::Mat;
use crate::polar::{awgn_llrs, polar_encode, sc_decode, CodeLayout, MlDecoder, ScMode};

/// An encoder/decoder pair evaluated at inference time.
pub trait Codec {
    fn name(&self) -> String;
    fn n(&self) -> usize;
    fn k(&self) -> usize;
    /// One codeword per message row.
    fn encode(&self, u: &Bits) -> Result<Mat>;
    /// Estimated messages for the received rows.
    fn decode(&self, y: &Mat, channel: &ChannelSpec) -> Result<Bits>;
}

fn bipolar(bits: &[u8]) -> impl Iterator<Item = f64> + '_ {
    bits.iter().map(|&b| 1.0 - 2.0 * b as f64)
}

/// BPSK without coding: `n = k`, hard decisions per symbol.
#[derive(Clone, Debug)]
pub struct Uncoded {
    pub k: usize,
}

impl Codec for Uncoded {
    fn name(&self) -> String {
        format!("uncoded({})", self.k)
    }

    fn n(&self) -> usize {
        self.k
    }

    fn k(&self) -> usize {
        self.k
    }

    fn encode(&self, u: &Bits) -> Result<Mat> {
        Mat::from_vec(u.rows(), u.cols(), bipolar(u.data()).collect())
    }

    fn decode(&self, y: &Mat, _channel: &ChannelSpec) -> Result<Bits> {
        Bits::from_vec(
            y.rows(),
            y.cols(),
            y.data().iter().map(|&v| u8::from(v < 0.0)).collect(),
        )
    }
}

fn polar_codewords(layout: &CodeLayout, u: &Bits) -> Result<Mat> {
    let mut data = Vec::with_capacity(u.rows() * layout.n());
    for r in 0..u.rows() {
        data.extend(bipolar(&polar_encode(layout, u.row(r))?));
    }
    Mat::from_vec(u.rows(), layout.n(), data)
}

/// Classical polar code with successive cancellation decoding. LLRs are
/// computed as for AWGN at the channel's noise level.
#[derive(Clone, Debug)]
pub struct PolarSc {
    pub layout: CodeLayout,
    pub mode: ScMode,
}

impl Codec for PolarSc {
    fn name(&self) -> String {
        let m = match self.mode {
            ScMode::Exact => "sc",
            ScMode::MinSum => "sc-minsum",
        };
        format!("polar({},{})+{m}", self.layout.n(), self.layout.k())
    }

    fn n(&self) -> usize {
        self.layout.n()
    }

    fn k(&self) -> usize {
        self.layout.k()
    }

    fn encode(&self, u: &Bits) -> Result<Mat> {
        polar_codewords(&self.layout, u)
    }

    fn decode(&self, y: &Mat, channel: &ChannelSpec) -> Result<Bits> {
        let sigma = channel.sigma();
        let mut out = Vec::with_capacity(y.rows() * self.k());
        for r in 0..y.rows() {
            out.extend(sc_decode(&self.layout, &awgn_llrs(y.row(r), sigma), self.mode)?.bits);
        }
        Bits::from_vec(y.rows(), self.k(), out)
    }
}

/// Classical polar code with exhaustive minimum-distance decoding.
#[derive(Clone, Debug)]
pub struct PolarMl {
    layout: CodeLayout,
    ml: MlDecoder,
}

impl PolarMl {
    pub fn new(layout: CodeLayout) -> Result<Self> {
        let ml = MlDecoder::new(&layout)?;
        Ok(Self { layout, ml })
    }
}

impl Codec for PolarMl {
    fn name(&self) -> String {
        format!("polar({},{})+ml", self.layout.n(), self.layout.k())
    }

    fn n(&self) -> usize {
        self.layout.n()
    }

    fn k(&self) -> usize {
        self.layout.k()
    }

    fn encode(&self, u: &Bits) -> Result<Mat> {
        polar_codewords(&self.layout, u)
    }

    fn decode(&self, y: &Mat, _channel: &ChannelSpec) -> Result<Bits> {
        let mut out = Vec::with_capacity(y.rows() * self.k());
        for r in 0..y.rows() {
            out.extend(self.ml.decode(y.row(r))?);
        }
        Bits::from_vec(y.rows(), self.k(), out)
    }
}

/// Neural code in evaluation mode: running-statistics normalization and
/// the sign for binarized codes.
#[derive(Clone, Debug)]
pub struct DeepPolar {
    pub code: NeuralCode,
    pub feedback: Feedback,
    pub parallel: bool,
}

impl DeepPolar {
    pub fn new(code: NeuralCode) -> Self {
        Self {
            code,
            feedback: Feedback::Hard,
            parallel: false,
        }
    }
}

impl Codec for DeepPolar {
    fn name(&self) -> String {
        format!(
            "deeppolar({},{},ell={}){}",
            self.code.n(),
            self.code.k(),
            self.code.layout().ell(),
            if self.code.binary { "-binary" } else { "" }
        )
    }

    fn n(&self) -> usize {
        self.code.n()
    }

    fn k(&self) -> usize {
        self.code.k()
    }

    fn encode(&self, u: &Bits) -> Result<Mat> {
        dp_encode_eval(&self.code, u)
    }

    fn decode(&self, y: &Mat, _channel: &ChannelSpec) -> Result<Bits> {
        let out = if self.parallel {
            dp_decode_parallel(&self.code, y, self.feedback)?
        } else {
            dp_decode_sc(&self.code, y, self.feedback)?
        };
        Ok(out.bits)
    }
}

pub(crate) fn check_shape(codec: &dyn Codec, u: &Bits, decoded: &Bits) -> Result<()> {
    if decoded.rows() != u.rows() || decoded.cols() != u.cols() {
        return Err(Error::Input(format!(
            "{} decoded {}x{} for {}x{} messages",
            codec.name(),
            decoded.rows(),
            decoded.cols(),
            u.rows(),
            u.cols()
        )));
    }
    Ok(())
}
