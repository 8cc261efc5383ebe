//! `myWeights.h`: the bundle as C float initializers.

use std::fmt::Write as _;

use super::bin::WeightBundle;

const VALUES_PER_LINE: usize = 8;

/// Formats like C's `%.9g`: nine significant digits, trailing zeros removed,
/// exponent form outside [1e-5, 1e9). Always carries a `.` or exponent so the
/// literal is a floating constant.
pub fn format_g9(v: f32) -> String {
    if v == 0.0 {
        return if v.is_sign_negative() { "-0.0".into() } else { "0.0".into() };
    }
    let sci = format!("{:.8e}", v);
    let (mantissa, exp) = sci.split_once('e').expect("LowerExp has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        let fixed = format!("{:.*}", decimals, v);
        let trimmed = if fixed.contains('.') {
            fixed.trim_end_matches('0').trim_end_matches('.')
        } else {
            &fixed
        };
        if trimmed.contains('.') {
            trimmed.to_string()
        } else {
            format!("{trimmed}.0")
        }
    } else {
        let m = if mantissa.contains('.') {
            mantissa.trim_end_matches('0').trim_end_matches('.')
        } else {
            mantissa
        };
        format!("{m}e{exp}")
    }
}

fn c_identifier(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Renders the C header text for a bundle.
pub fn emit_c_header(bundle: &WeightBundle) -> String {
    let m = &bundle.meta;
    let mut out = String::new();
    let labels = m
        .class_labels
        .iter()
        .map(|l| format!("\"{}\"", l.replace('\\', "\\\\").replace('"', "\\\"")))
        .collect::<Vec<_>>()
        .join(", ");
    let _ = writeln!(out, "/*");
    let _ = writeln!(out, " * myWeights.h - baked CNN weights");
    let _ = writeln!(out, " *");
    let _ = writeln!(out, " * To compile these weights into the firmware, add");
    let _ = writeln!(out, " *     #define USE_BAKED_WEIGHTS");
    let _ = writeln!(out, " * before this header is included. Arrays are in device loop order:");
    let _ = writeln!(out, " *     conv1_w [f][ky][kx][ic], conv2_w [f][ic][ky][kx], dense_w [cls][f][y][x]");
    let _ = writeln!(out, " *");
    let _ = writeln!(
        out,
        " * version {}, inputSize {}, numClasses {}, grayscale {}, f1 {}, f2 {}, conv2Out {}",
        m.version, m.input_size, m.num_classes, m.grayscale, m.f1, m.f2, m.conv2_out
    );
    let _ = writeln!(out, " * classLabels: {labels}");
    let _ = writeln!(out, " */");
    let _ = writeln!(out, "#ifndef MY_WEIGHTS_H");
    let _ = writeln!(out, "#define MY_WEIGHTS_H");
    let _ = writeln!(out);
    let _ = writeln!(out, "#define WEIGHTS_VERSION {}", m.version);
    let _ = writeln!(out, "#define WEIGHTS_INPUT_SIZE {}", m.input_size);
    let _ = writeln!(out, "#define WEIGHTS_NUM_CLASSES {}", m.num_classes);
    let _ = writeln!(out, "#define WEIGHTS_GRAYSCALE {}", u8::from(m.grayscale));
    let _ = writeln!(out, "#define WEIGHTS_CONV1_FILTERS {}", m.f1);
    let _ = writeln!(out, "#define WEIGHTS_CONV2_FILTERS {}", m.f2);
    let _ = writeln!(out, "#define WEIGHTS_CONV2_OUT {}", m.conv2_out);
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "static const char *const WEIGHTS_CLASS_LABELS[{}] = {{ {labels} }};",
        m.class_labels.len()
    );
    for (name, arr) in bundle.arrays() {
        let _ = writeln!(out);
        let _ = writeln!(out, "static const float {}[{}] = {{", c_identifier(name), arr.len());
        for chunk in arr.chunks(VALUES_PER_LINE) {
            let line = chunk
                .iter()
                .map(|&v| format!("{}f", format_g9(v)))
                .collect::<Vec<_>>()
                .join(", ");
            let _ = writeln!(out, "    {line},");
        }
        let _ = writeln!(out, "}};");
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "#endif /* MY_WEIGHTS_H */");
    out
}
