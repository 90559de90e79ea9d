#pragma once

#include <vector>

namespace styleadapt_tests {

struct PublishedRow {
    std::vector<double> acc;
    double bs, ppl, g;
};

// Published automatic-evaluation rows: the sentiment-transfer benchmark,
// the multiple-stylistic-attribute-outputs task, and compositional editing.
// Used as a formula oracle: g_score(acc, bs, ppl) must land within +-0.02
// of the printed G for every row.
inline const std::vector<PublishedRow>& published_rows() {
    static const std::vector<PublishedRow> rows = {
        // Sentiment transfer.
        {{94.5}, 0.88, 11.3, 1.95},
        {{74.3}, 0.89, 35.3, 1.23},
        {{87.6}, 0.91, 36.4, 1.30},
        {{90.2}, 0.91, 34.0, 1.34},
        {{88.9}, 0.95, 27.1, 1.46},
        {{83.7}, 0.92, 47.2, 1.18},
        {{50.6}, 0.91, 53.1, 0.95},
        {{96.2}, 0.93, 33.5, 1.39},
        {{85.8}, 0.95, 10.1, 2.00},
        {{90.1}, 0.91, 8.2, 2.15},
        // Multiple stylistic attribute outputs: Tense-Voice.
        {{91.1}, 0.91, 15.3, 1.76},
        {{87.2}, 0.85, 11.0, 1.89},
        {{96.9, 81.9}, 0.96, 4.7, 2.63},
        // Tense-ADJADV-Removal.
        {{92.6}, 0.92, 27.0, 1.47},
        {{83.7}, 0.93, 21.7, 1.53},
        {{96.2, 76.5}, 0.95, 11.8, 1.91},
        // Tense-PP-Front<->Back.
        {{95.7}, 0.83, 6.8, 2.27},
        {{57.2}, 0.83, 10.4, 1.66},
        {{88.2, 48.9}, 0.96, 4.0, 2.54},
        // Tense-PP-Removal.
        {{94.9}, 0.91, 27.0, 1.47},
        {{87.2}, 0.91, 26.1, 1.45},
        {{96.0, 74.5}, 0.96, 12.5, 1.87},
        // Compositional editing: Tense-Voice.
        {{80.2, 88.1}, 0.85, 22.2, 1.48},
        {{88.2, 85.4}, 0.90, 8.0, 2.14},
        // Tense-ADJADV-Removal.
        {{88.6, 90.0}, 0.89, 42.2, 1.23},
        {{88.9, 92.7}, 0.86, 22.0, 1.53},
        // Tense-PP-Front<->Back.
        {{76.1, 65.7}, 0.82, 8.1, 1.93},
        {{88.2, 50.0}, 0.92, 4.9, 2.35},
        // Tense-PP-Removal.
        {{91.2, 85.7}, 0.88, 51.4, 1.15},
        {{90.1, 88.2}, 0.86, 20.9, 1.54},
    };
    return rows;
}

}  // namespace styleadapt_tests
