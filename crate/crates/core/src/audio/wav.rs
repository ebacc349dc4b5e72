use std::io::Cursor;
use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::{AudioClip, AudioError};

/// Parses a RIFF/WAVE file holding 16-bit integer mono PCM.
pub fn read_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    match format_tag(bytes) {
        Some(WAVE_FORMAT_PCM | WAVE_FORMAT_EXTENSIBLE) | None => {}
        Some(WAVE_FORMAT_IEEE_FLOAT) => return Err(AudioError::UnsupportedFormat("floating-point samples".into())),
        Some(tag) => return Err(AudioError::UnsupportedFormat(format!("compressed encoding 0x{tag:04x}"))),
    }
    let reader = WavReader::new(Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(AudioError::UnsupportedFormat(format!("{} channels (mono required)", spec.channels)));
    }
    if spec.sample_format != SampleFormat::Int {
        return Err(AudioError::UnsupportedFormat("floating-point samples".into()));
    }
    if spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedFormat(format!("{}-bit samples (16 required)", spec.bits_per_sample)));
    }
    let declared = reader.len() as usize;
    let samples = reader
        .into_samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| match e {
            hound::Error::IoError(io) => {
                AudioError::Malformed(format!("data chunk declares {declared} samples but file ends early ({io})"))
            }
            other => map_hound(other),
        })?;
    Ok(AudioClip::new(samples, spec.sample_rate))
}

const WAVE_FORMAT_PCM: u16 = 0x0001;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 0x0003;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Format tag of the `fmt ` chunk, if the RIFF chunk list can be walked that far.
fn format_tag(bytes: &[u8]) -> Option<u16> {
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return None;
    }
    let mut pos = 12;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        if id == b"fmt " {
            return bytes.get(pos + 8..pos + 10).map(|t| u16::from_le_bytes([t[0], t[1]]));
        }
        pos = pos.checked_add(8 + len + (len & 1))?;
    }
    None
}

pub fn read_wav_file(path: &Path) -> Result<AudioClip, AudioError> {
    read_wav(&std::fs::read(path)?)
}

pub fn write_wav(clip: &AudioClip) -> Vec<u8> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::with_capacity(44 + clip.samples.len() * 2));
    {
        let mut w = WavWriter::new(&mut cursor, spec).expect("writing to memory");
        for &s in &clip.samples {
            w.write_sample(s).expect("writing to memory");
        }
        w.finalize().expect("writing to memory");
    }
    cursor.into_inner()
}

fn map_hound(e: hound::Error) -> AudioError {
    match e {
        hound::Error::Unsupported => AudioError::UnsupportedFormat("compressed or unknown WAVE encoding".into()),
        hound::Error::FormatError(msg) => AudioError::Malformed(msg.to_string()),
        hound::Error::TooWide => AudioError::UnsupportedFormat("sample width".into()),
        hound::Error::UnfinishedSample | hound::Error::InvalidSampleFormat => {
            AudioError::Malformed("inconsistent sample layout".into())
        }
        hound::Error::IoError(io) => AudioError::Malformed(format!("truncated header ({io})")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(format: u16, channels: u16, rate: u32, bits: u16, data_len: u32) -> Vec<u8> {
        let block = channels * bits / 8;
        let mut b = Vec::new();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + data_len).to_le_bytes());
        b.extend_from_slice(b"WAVEfmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&format.to_le_bytes());
        b.extend_from_slice(&channels.to_le_bytes());
        b.extend_from_slice(&rate.to_le_bytes());
        b.extend_from_slice(&(rate * u32::from(block)).to_le_bytes());
        b.extend_from_slice(&block.to_le_bytes());
        b.extend_from_slice(&bits.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&data_len.to_le_bytes());
        b
    }

    #[test]
    fn minimal_silent_file() {
        let mut b = header(1, 1, 16_000, 16, 32_000);
        b.resize(b.len() + 32_000, 0);
        let clip = read_wav(&b).unwrap();
        assert_eq!(clip.sample_rate, 16_000);
        assert_eq!(clip.samples, vec![0i16; 16_000]);
    }

    #[test]
    fn samples_are_verbatim() {
        let clip = AudioClip::new(vec![0, 1, -1, i16::MAX, i16::MIN, 1234], 8_000);
        assert_eq!(read_wav(&write_wav(&clip)).unwrap(), clip);
    }

    #[test]
    fn stereo_is_unsupported() {
        let mut b = header(1, 2, 16_000, 16, 8);
        b.resize(b.len() + 8, 0);
        assert!(matches!(read_wav(&b), Err(AudioError::UnsupportedFormat(_))));
    }

    #[test]
    fn float_and_compressed_are_unsupported() {
        let mut b = header(3, 1, 16_000, 32, 8);
        b.resize(b.len() + 8, 0);
        assert!(matches!(read_wav(&b), Err(AudioError::UnsupportedFormat(_))));
        let mut b = header(2, 1, 16_000, 4, 8);
        b.resize(b.len() + 8, 0);
        assert!(matches!(read_wav(&b), Err(AudioError::UnsupportedFormat(_))));
    }

    #[test]
    fn eight_bit_is_unsupported() {
        let mut b = header(1, 1, 16_000, 8, 8);
        b.resize(b.len() + 8, 0);
        assert!(matches!(read_wav(&b), Err(AudioError::UnsupportedFormat(_))));
    }

    #[test]
    fn declared_size_beyond_file_is_malformed() {
        let mut b = header(1, 1, 16_000, 16, 32_000);
        b.resize(b.len() + 1_000, 0);
        assert!(matches!(read_wav(&b), Err(AudioError::Malformed(_))));
    }

    #[test]
    fn garbage_is_malformed() {
        assert!(matches!(read_wav(b"RIFX...."), Err(AudioError::Malformed(_))));
        assert!(matches!(read_wav(&header(1, 1, 16_000, 16, 0)[..20]), Err(AudioError::Malformed(_))));
    }
}
