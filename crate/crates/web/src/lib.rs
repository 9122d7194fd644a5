//! Browser bindings for three small pieces of the pipeline: encoding a
//! note list as a bootleg score, tracing a one-cycle schedule, and listing
//! the crops used for page-level prediction.

use wasm_bindgen::prelude::*;

use stylus_core::bootleg::{encode_symbolic, parse_note_list, PitchMap, N_POSITIONS};
use stylus_core::inference::enumerate_crops;
use stylus_core::tokenizer::column_to_word;
use stylus_core::train::{one_cycle, OneCycleConfig};

/// Staff positions top to bottom, one text row each, `#` for a notehead.
/// The last lines hold the word token of every column.
pub fn render_notes(text: &str) -> Result<String, String> {
    let events = parse_note_list(text).map_err(|e| e.to_string())?;
    let score = encode_symbolic(&events, &PitchMap::default()).map_err(|e| e.to_string())?;
    let mut out = String::new();
    for p in (0..N_POSITIONS).rev() {
        out.push_str(&format!("{p:>2} "));
        out.extend(
            score
                .columns
                .iter()
                .map(|c| if c.contains(p) { '#' } else { '.' }),
        );
        out.push('\n');
    }
    out.push('\n');
    for (i, c) in score.columns.iter().enumerate() {
        out.push_str(&format!("{i:>3}  {}\n", column_to_word(*c)));
    }
    Ok(out)
}

/// Learning rates for every step followed by the momenta.
pub fn cycle_trace(lr_max: f64, total_steps: usize, pct_start: f64) -> Result<Vec<f64>, String> {
    let cfg = OneCycleConfig {
        pct_start,
        ..OneCycleConfig::new(lr_max, total_steps)
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let steps: Vec<(f64, f64)> = (0..total_steps)
        .map(|s| one_cycle(&cfg, s).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    Ok(steps
        .iter()
        .map(|s| s.0)
        .chain(steps.iter().map(|s| s.1))
        .collect())
}

/// Crop bounds flattened as `start, end, start, end, ...`.
pub fn crop_bounds(tokens: usize, crop: usize) -> Result<Vec<u32>, String> {
    if crop == 0 {
        return Err("crop length must be positive".into());
    }
    Ok(enumerate_crops(tokens, crop)
        .into_iter()
        .flat_map(|(s, e)| [s as u32, e as u32])
        .collect())
}

#[wasm_bindgen(js_name = encodeNotes)]
pub fn encode_notes(text: &str) -> Result<String, JsError> {
    render_notes(text).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = oneCycle)]
pub fn one_cycle_js(lr_max: f64, total_steps: usize, pct_start: f64) -> Result<Vec<f64>, JsError> {
    cycle_trace(lr_max, total_steps, pct_start).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = crops)]
pub fn crops_js(tokens: usize, crop: usize) -> Result<Vec<u32>, JsError> {
    crop_bounds(tokens, crop).map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chord_and_melody() {
        let text = "0 left 48\n0 right 60\n0 right 64\n1 right 62\n3/2 right 64\n";
        let out = render_notes(text).unwrap();
        let grid: Vec<&str> = out.lines().take(N_POSITIONS as usize).collect();
        assert_eq!(grid.len(), 62);
        assert!(grid.iter().all(|row| row.len() == 3 + 3));
        let heads: Vec<usize> = (0..3)
            .map(|c| grid.iter().filter(|r| r.as_bytes()[3 + c] == b'#').count())
            .collect();
        assert_eq!(heads, vec![3, 1, 1]);
        assert!(render_notes("0 middle 60").is_err());
    }

    #[test]
    fn trace_has_both_halves() {
        let t = cycle_trace(0.01, 10, 0.3).unwrap();
        assert_eq!(t.len(), 20);
        assert!((t[0] - 0.01 / 25.0).abs() < 1e-15);
        assert!((t[3] - 0.01).abs() < 1e-15);
        assert!((t[13] - 0.85).abs() < 1e-15);
        assert!(cycle_trace(0.01, 0, 0.3).is_err());
    }

    #[test]
    fn crops_flatten() {
        assert_eq!(
            crop_bounds(160, 64).unwrap(),
            vec![0, 64, 32, 96, 64, 128, 96, 160]
        );
        assert_eq!(crop_bounds(256, 64).unwrap().len(), 14);
        assert!(crop_bounds(10, 0).is_err());
    }
}
