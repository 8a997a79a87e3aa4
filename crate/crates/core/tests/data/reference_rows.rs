//! Reported classifier results: ACC in percent, then Recall, Precision, F1,
//! for site A and site B.

use fssl_core::eval::PublishedMetrics;

/// (case, control) test images per site.
pub const TEST_TOTALS: [(usize, usize); 2] = [(49, 99), (68, 130)];

const fn row(acc_percent: f64, recall: f64, precision: f64, f1: f64) -> PublishedMetrics {
    PublishedMetrics {
        acc_percent,
        recall,
        precision,
        f1,
    }
}

pub const ROWS: [(&str, [PublishedMetrics; 2]); 11] = [
    ("random", [row(79.73, 0.5306, 0.7879, 0.6341), row(76.77, 0.5735, 0.6964, 0.6290)]),
    ("imagenet", [row(80.41, 0.4898, 0.8571, 0.6234), row(77.78, 0.5588, 0.7308, 0.6333)]),
    ("ssl_n8", [row(83.11, 0.6327, 0.8158, 0.7126), row(79.80, 0.7206, 0.7000, 0.7101)]),
    ("ssl_n16", [row(83.11, 0.6939, 0.7727, 0.7312), row(80.30, 0.6029, 0.7736, 0.6777)]),
    ("ssl_n32", [row(83.11, 0.6531, 0.8000, 0.7191), row(79.29, 0.6176, 0.7368, 0.6720)]),
    ("cssl_n8", [row(86.49, 0.7143, 0.8537, 0.7778), row(81.82, 0.7794, 0.7162, 0.7465)]),
    ("cssl_n16", [row(85.81, 0.7551, 0.8043, 0.7789), row(81.31, 0.6324, 0.7818, 0.6992)]),
    ("cssl_n32", [row(85.14, 0.7959, 0.7647, 0.7800), row(81.31, 0.6471, 0.7719, 0.7040)]),
    ("csfssl", [row(84.46, 0.6735, 0.8250, 0.7416), row(79.80, 0.6912, 0.7121, 0.7015)]),
    ("ppfssl_A", [row(84.46, 0.7347, 0.7826, 0.7579), row(80.81, 0.6618, 0.7500, 0.7031)]),
    ("ppfssl_B", [row(84.46, 0.7755, 0.7600, 0.7677), row(80.30, 0.6618, 0.7377, 0.6977)]),
];
