//! Reference queries used throughout the docs and tests.

pub const WINDOW_QUERY: &str = "WINDOW(GPS_S1, 4s)";

pub const FILTER_QUERY: &str = "FILTER(WINDOW(GPS_S1, 4s),'latitude'<50)";

pub const JOIN_QUERY: &str = "JOIN(
  FILTER(WINDOW(GPS_S1, 4s), 'latitude'<50),
  FILTER(WINDOW(GPS_S2, 4s), 'latitude'<50),
  GPS_S1.'ts' = GPS_S2.'ts'
)";

pub const HEATMAP_QUERY: &str = "HEATMAP(
  'cell_size', 'area',
  WINDOW(GPS_S1, 4s)
)";

pub const PREDICT_QUERY: &str = "PREDICT(30s, WINDOW(PLUG_S1, 4s))";

pub const AGGREGATE_QUERY: &str = "AGGREGATE(avg, 'speed', WINDOW(GPS_S1, 4s))";

pub const ALL: [&str; 6] = [
    WINDOW_QUERY,
    FILTER_QUERY,
    JOIN_QUERY,
    HEATMAP_QUERY,
    PREDICT_QUERY,
    AGGREGATE_QUERY,
];
