//! Character tokenizer: printable ASCII plus a BOS marker and an OOV
//! substitute. BOS is prepended for generation.

pub const BOS: usize = 0;
pub const OOV: usize = 1;
const FIRST_CHAR: usize = 2;
const PRINTABLE_START: u8 = 0x20;
const PRINTABLE_END: u8 = 0x7e;

#[derive(Debug, Clone, Copy, Default)]
pub struct CharTokenizer;

impl CharTokenizer {
    pub fn vocab_size(&self) -> usize {
        FIRST_CHAR + (PRINTABLE_END - PRINTABLE_START + 1) as usize
    }

    pub fn encode_char(&self, c: char) -> usize {
        let code = c as u32;
        if (PRINTABLE_START as u32..=PRINTABLE_END as u32).contains(&code) {
            FIRST_CHAR + (code - PRINTABLE_START as u32) as usize
        } else {
            OOV
        }
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars().map(|c| self.encode_char(c)).collect()
    }

    /// BOS followed by the encoded prompt.
    pub fn encode_prompt(&self, text: &str) -> Vec<usize> {
        let mut ids = vec![BOS];
        ids.extend(self.encode(text));
        ids
    }

    pub fn decode_id(&self, id: usize) -> char {
        if id >= FIRST_CHAR && id < self.vocab_size() {
            (PRINTABLE_START + (id - FIRST_CHAR) as u8) as char
        } else if id == OOV {
            '\u{fffd}'
        } else {
            '\u{0}'
        }
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id >= FIRST_CHAR)
            .map(|&id| self.decode_id(id))
            .collect()
    }
}
