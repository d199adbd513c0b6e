#pragma once

// Generated from data/paper_fixtures/v1/*.csv; keep the two in sync.

#include <array>
#include <string_view>

namespace scalelab::report {

struct FixtureTable {
  int number;
  std::string_view caption;
  std::string_view csv;
};

inline constexpr std::string_view kFixtureVersion = "v1";

inline constexpr std::array<FixtureTable, 7> kPaperTables{{
    {1, "1 rank/node, 48 threads (SNG, container)",
     R"csv(units,time_s,linear_s,efficiency_pct
4,3806,3806,-
8,1910,1903,99.6
16,1001,951.5,95.1
32,504,475.75,94.4
64,253,237.87,94
128,124,118.93,95.9
256,61,59.46,97.5
512,33,29.73,90.1
)csv"},
    {2, "2 ranks/node, 48 threads, hyperthreading (SNG, container)",
     R"csv(units,time_s,linear_s,efficiency_pct
4,2302,2302,-
8,1238,1151,93
16,638,575.5,90.2
32,323,287.75,89.1
64,164,143.87,87.7
128,88,79.93,81.8
256,47,35.96,76.6
512,25,17.98,71.9
)csv"},
    {3, "4 ranks/node, 12 threads (SNG, container)",
     R"csv(units,time_s,linear_s,efficiency_pct
4,959,959,-
8,507,479.5,94.6
16,264,239.75,90.8
32,137,119.87,87.5
64,72,59.93,83.3
128,39,29.96,76.8
256,21,14.98,71.4
512,12,7.49,62.5
)csv"},
    {4, "4 ranks/node, 12 threads, host MPI bound into the container (SNG)",
     R"csv(units,time_s,linear_s,efficiency_pct
4,907.26,907.26,-
8,479.52,453.63,94.6
16,244.42,226.82,92.8
32,124.22,113.41,91.3
64,62.24,56.70,91.1
128,31.22,28.35,90.8
256,15.63,14.18,90.7
512,7.84,7.09,90.4
768,3.94,3.54,89.9
)csv"},
    {5, "4 ranks/node, 10 threads (40-core Xeon Gold 6148 cluster, bare metal)",
     R"csv(units,time_s,linear_s,efficiency_pct
1,7453,7453,-
2,3797,3726.5,98.14
4,1934,1863.25,96.34
8,990,931.63,94.1
16,504,465.81,92.42
32,263,232.91,88.55
64,132,116.45,88.22
)csv"},
    {6, "4 ranks/node, 11 threads (Xeon 8160 cluster, bare metal)",
     R"csv(units,time_s,linear_s,efficiency_pct
1,17831,17831,-
2,8998,8915.5,99.1
4,4545,4457.75,98.08
8,2288,2228.87,97.4
16,1151,1114.44,96.8
32,581,557.22,95.9
64,293,278.61,95.1
128,148,139.60,94.1
)csv"},
    {7, "single convolution kernel throughput (SNG)",
     R"csv(units,measured_pflops,pct_peak
4,0.01099,66.17
8,0.02199,66.21
16,0.04450,67.01
32,0.08386,63.14
64,0.17313,65.17
128,0.31878,67.60
256,0.70547,66.39
512,1.39412,65.60
768,2.08143,65.29
)csv"},
}};

}  // namespace scalelab::report
